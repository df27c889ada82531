//! Sentence template pool shared by note text and the sentiment seed set.
//!
//! Domain templates are `{subject} <core> <ending>.`; each core contains at
//! least one lexicon pattern of its own domain and none of any other.

use crate::domains::{Polarity, RiskDomain};

pub const SUBJECT_SLOT: &str = "{subject}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceTemplate {
    /// `None` for filler sentences.
    pub domain: Option<RiskDomain>,
    pub polarity: Polarity,
    pub pattern: String,
}

impl SentenceTemplate {
    pub fn render(&self, subject: &str) -> String {
        self.pattern.replace(SUBJECT_SLOT, subject)
    }
}

pub const SUBJECTS: &[&str] = &[
    "The patient",
    "Patient",
    "On interview the patient",
    "Per staff report the patient",
    "Today the patient",
    "Staff noted that the patient",
];

const ENDINGS: &[&str] = &[
    "during the interview",
    "on the unit",
    "this morning",
    "at the time of evaluation",
];

fn cores(domain: RiskDomain, polarity: Polarity) -> &'static [&'static str] {
    use Polarity::*;
    use RiskDomain::*;
    match (domain, polarity) {
        (Appearance, Positive) => &[
            "was well groomed with good hygiene",
            "appeared neatly dressed and clean",
            "maintained good eye contact and grooming",
            "presented in clean attire",
            "showed good hygiene and an appropriate appearance",
        ],
        (Appearance, Neutral) => &[
            "was casually dressed",
            "wore hospital clothing",
            "had an appearance consistent with stated age",
            "was dressed in street clothes",
            "had grooming that was unremarkable",
        ],
        (Appearance, Negative) => &[
            "appeared disheveled and unkempt",
            "had poor hygiene and body odor",
            "was malodorous with soiled clothing",
            "made poor eye contact and looked unkempt",
            "neglected grooming and appeared disheveled",
        ],
        (ThoughtProcess, Positive) => &[
            "had a linear and goal directed thought process",
            "was coherent and logical",
            "demonstrated organized thinking",
            "presented with a logical thought process",
            "remained goal directed and coherent",
        ],
        (ThoughtProcess, Neutral) => &[
            "had a thought process at baseline",
            "had a thought process that was reviewed",
            "had a thought process that was not fully assessed",
            "showed a thought process similar to prior exams",
            "had a thought process noted without change",
        ],
        (ThoughtProcess, Negative) => &[
            "was tangential and disorganized",
            "showed flight of ideas and loose associations",
            "had racing thoughts and derailment",
            "displayed thought blocking",
            "was circumstantial and perseverative",
        ],
        (ThoughtContent, Positive) => &[
            "denied suicidal ideation and homicidal ideation",
            "denied auditory hallucinations or delusions",
            "had no paranoia or persecutory beliefs",
            "showed no preoccupations",
            "had thought content free of delusions",
        ],
        (ThoughtContent, Neutral) => &[
            "was asked about hallucinations",
            "had thought content that was reviewed",
            "was screened for suicidal ideation",
            "discussed prior delusions",
            "was questioned about obsessions",
        ],
        (ThoughtContent, Negative) => &[
            "endorsed auditory hallucinations",
            "expressed paranoid and persecutory delusions",
            "reported passive suicidal ideation",
            "described hearing voices and ideas of reference",
            "was preoccupied with grandiose delusions",
        ],
        (Interpersonal, Positive) => &[
            "reported supportive relationships with family",
            "spent time with friends and peers",
            "described good social support",
            "had a positive visit with her mother",
            "got along well with the roommate",
        ],
        (Interpersonal, Neutral) => &[
            "mentioned a brother who lives nearby",
            "had a phone call with family",
            "spoke about her father",
            "listed a sister as the contact",
            "met with the roommate briefly",
        ],
        (Interpersonal, Negative) => &[
            "reported conflict with family",
            "was socially isolated from peers",
            "described a relationship ending with a boyfriend",
            "argued with her mother on the phone",
            "had ongoing conflict with a spouse",
        ],
        (SubstanceUse, Positive) => &[
            "maintained sobriety",
            "remained sober and attended aa meetings",
            "had a negative urine toxicology",
            "denied alcohol or cannabis use",
            "reported no relapse since detox",
        ],
        (SubstanceUse, Neutral) => &[
            "was asked about alcohol history",
            "had urine toxicology sent",
            "discussed substance use history",
            "was screened for opioids",
            "reported past cannabis exposure",
        ],
        (SubstanceUse, Negative) => &[
            "reported heavy drinking",
            "relapsed on cocaine",
            "was intoxicated on arrival",
            "showed signs of alcohol withdrawal",
            "admitted daily marijuana and heroin use",
        ],
        (Occupation, Positive) => &[
            "is employed full time",
            "returned to work",
            "is doing well in college classes",
            "started a new job",
            "is working as a volunteer",
        ],
        (Occupation, Neutral) => &[
            "discussed employment options",
            "mentioned a school schedule",
            "talked about a career plan",
            "described the occupation history",
            "asked about disability benefits",
        ],
        (Occupation, Negative) => &[
            "lost the job",
            "is unemployed and cannot find work",
            "failed classes at school",
            "was fired by the boss",
            "dropped out of college",
        ],
        (Mood, Positive) => &[
            "described a euthymic mood",
            "appeared cheerful with a bright affect",
            "reported a stable mood",
            "was calm with a full range of affect",
            "denied feeling depressed",
        ],
        (Mood, Neutral) => &[
            "was asked to rate the mood",
            "had an affect that was observed",
            "reported mood as okay",
            "discussed mood over the week",
            "had affect noted on rounds",
        ],
        (Mood, Negative) => &[
            "reported depressed mood and anhedonia",
            "was tearful and hopeless",
            "appeared irritable and labile",
            "described feeling sad and anxious",
            "endorsed dysphoric mood swings",
        ],
    }
}

/// Filler sentences carry no lexicon pattern.
pub const FILLERS: &[&str] = &[
    "Vital signs were within normal limits.",
    "Medications were reviewed with the treatment team.",
    "Labs were drawn this morning and are pending.",
    "The patient slept through the night.",
    "Seen by Dr. Smith on morning rounds.",
    "Appetite was adequate at all meals.",
    "No acute events were reported overnight.",
    "Blood pressure was checked twice today.",
    "The treatment plan was discussed in team meeting.",
    "Discharge planning is ongoing.",
    "The patient attended group therapy.",
    "No side effects from medication were noted.",
    "Weight was stable compared with admission.",
    "The patient requested a blanket and water.",
    "Nursing completed routine safety checks.",
    "The patient took scheduled medications without issue.",
    "Sleep was interrupted around midnight.",
    "A physical exam was completed without findings.",
    "The patient walked the hallway with staff.",
    "Level of observation remains unchanged.",
    "Lithium level was within range.",
    "The patient was oriented to person, place, and time.",
    "Fluids were encouraged throughout the day.",
    "The patient asked questions about the schedule.",
    "Discussed with Dr. Jones, who agrees with the plan.",
    "Vitals were repeated at noon.",
    "The safety plan was updated by staff.",
    "The team will continue to monitor closely.",
];

/// Templates for one domain and polarity.
pub fn domain_templates(domain: RiskDomain, polarity: Polarity) -> Vec<SentenceTemplate> {
    cores(domain, polarity)
        .iter()
        .flat_map(|core| {
            ENDINGS.iter().map(move |end| SentenceTemplate {
                domain: Some(domain),
                polarity,
                pattern: format!("{SUBJECT_SLOT} {core} {end}."),
            })
        })
        .collect()
}

pub fn filler_templates() -> Vec<SentenceTemplate> {
    FILLERS
        .iter()
        .map(|f| SentenceTemplate {
            domain: None,
            polarity: Polarity::Neutral,
            pattern: f.to_string(),
        })
        .collect()
}

/// Pool indexed as `[domain][polarity]`.
#[derive(Debug, Clone)]
pub struct TemplatePool {
    pub domain: Vec<Vec<Vec<SentenceTemplate>>>,
    pub fillers: Vec<SentenceTemplate>,
}

impl Default for TemplatePool {
    fn default() -> Self {
        TemplatePool {
            domain: RiskDomain::ALL
                .iter()
                .map(|&d| Polarity::ALL.iter().map(|&p| domain_templates(d, p)).collect())
                .collect(),
            fillers: filler_templates(),
        }
    }
}

impl TemplatePool {
    pub fn get(&self, d: RiskDomain, p: Polarity) -> &[SentenceTemplate] {
        &self.domain[d.index()][p.index()]
    }

    pub fn all(&self) -> impl Iterator<Item = &SentenceTemplate> {
        self.domain.iter().flatten().flatten().chain(&self.fillers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::Lexicon;
    use crate::textproc::{split_sentences, tokenize};

    #[test]
    fn at_least_twenty_templates_per_domain_and_polarity() {
        let pool = TemplatePool::default();
        for d in RiskDomain::ALL {
            for p in Polarity::ALL {
                assert!(pool.get(d, p).len() >= 20, "{d} {p:?}");
            }
        }
    }

    #[test]
    fn templates_match_exactly_their_own_domain() {
        let lex = Lexicon::default();
        let pool = TemplatePool::default();
        for t in pool.all() {
            for s in SUBJECTS {
                let text = t.render(s);
                let got: Vec<_> = lex.match_domains(&tokenize(&text)).iter().collect();
                let want: Vec<_> = t.domain.into_iter().collect();
                assert_eq!(got, want, "{text}");
                assert_eq!(split_sentences(&text).len(), 1, "{text}");
            }
        }
    }
}
