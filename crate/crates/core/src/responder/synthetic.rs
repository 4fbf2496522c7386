//! Built-in synthetic worlds.
//!
//! Facts are grouped into topics. Each topic contributes fact sentences,
//! on-topic questions (fully relevant to the topic's facts) and on-topic
//! statements (weakly relevant). Generic get-to-know-you questions are
//! relevant to every fact, and small-talk or movie-script lines are relevant
//! to none. The grounded responder built on top of this is discreet: it
//! answers on-topic questions with the matching fact and deflects the rest.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CandidatePool, GroundedConfig, GroundedResponder};
use crate::belief::FactUniverse;
use crate::error::{Error, Result};

struct Topic {
    facts: [&'static str; 5],
    questions: [&'static str; 3],
    statements: [&'static str; 2],
}

const TOPICS: [Topic; 20] = [
    Topic {
        facts: ["i was born in russia", "i grew up in brazil", "i was raised in canada", "my hometown is in japan", "i spent my childhood in kenya"],
        questions: ["where did you grow up?", "where were you born?", "what country are you from?"],
        statements: ["i moved around a lot as a kid.", "my hometown is pretty small."],
    },
    Topic {
        facts: ["my favorite vegetable is carrot", "i love spicy curry", "i eat sushi every week", "i am a vegetarian", "i bake bread on sundays"],
        questions: ["what kind of food do you like?", "what is your favorite thing to eat?", "do you cook at home?"],
        statements: ["i had pasta for lunch today.", "i am trying a new recipe tonight."],
    },
    Topic {
        facts: ["i like to swim", "i run marathons", "i play tennis on weekends", "i go rock climbing", "i do yoga every morning"],
        questions: ["what sports do you play?", "how do you stay active?", "do you exercise much?"],
        statements: ["i went for a jog this morning.", "the gym was crowded today."],
    },
    Topic {
        facts: ["i have two dogs", "i own a black cat", "i keep a parrot", "i have a goldfish named bob", "i volunteer at an animal shelter"],
        questions: ["do you have any pets?", "are you a dog or a cat person?", "what animals do you like?"],
        statements: ["my neighbor just got a puppy.", "i saw a cute dog in the park."],
    },
    Topic {
        facts: ["i work as a nurse", "i am a software engineer", "i teach high school math", "i drive a truck for a living", "i am a chef at a restaurant"],
        questions: ["what do you do for work?", "what is your job like?", "do you enjoy your career?"],
        statements: ["work has been busy this week.", "i have a meeting tomorrow."],
    },
    Topic {
        facts: ["i play the guitar", "i love jazz music", "i sing in a choir", "i listen to heavy metal", "i play piano every day"],
        questions: ["what kind of music do you like?", "do you play any instruments?", "who is your favorite band?"],
        statements: ["i heard a great song on the radio.", "there is a concert in town next week."],
    },
    Topic {
        facts: ["i read mystery novels", "i love science fiction books", "i am in a book club", "i write poetry", "i collect old comic books"],
        questions: ["do you like to read?", "what was the last book you read?", "what is your favorite book?"],
        statements: ["i started a new novel yesterday.", "the library downtown is nice."],
    },
    Topic {
        facts: ["i have visited twenty countries", "i love camping in the mountains", "i went to paris last summer", "i want to travel to australia", "i backpacked across europe"],
        questions: ["do you like to travel?", "where did you go on your last vacation?", "what is your dream destination?"],
        statements: ["i need a vacation soon.", "flights are so expensive lately."],
    },
    Topic {
        facts: ["i have three sisters", "i am an only child", "i have twin brothers", "i live with my grandparents", "my mother is a doctor"],
        questions: ["do you have any siblings?", "tell me about your family?", "are you close with your parents?"],
        statements: ["family dinners can be chaotic.", "i called my cousin yesterday."],
    },
    Topic {
        facts: ["i study biology at college", "i have a degree in history", "i dropped out of school", "i am learning french", "i am getting my phd"],
        questions: ["are you a student?", "what did you study in school?", "are you learning anything new?"],
        statements: ["exams are always stressful.", "i miss being in school."],
    },
    Topic {
        facts: ["i drive a red convertible", "i ride my bike to work", "i restore vintage cars", "i do not have a license", "i take the train every day"],
        questions: ["how do you get around town?", "do you like cars?", "what do you drive?"],
        statements: ["traffic was terrible today.", "gas prices keep going up."],
    },
    Topic {
        facts: ["i love horror movies", "i watch anime every night", "i am a huge star wars fan", "i never watch tv", "i binge cooking shows"],
        questions: ["what movies do you like?", "what shows are you watching lately?", "do you watch much tv?"],
        statements: ["there is a new movie out this weekend.", "i fell asleep during a film last night."],
    },
    Topic {
        facts: ["i grow tomatoes in my garden", "i have many house plants", "i love hiking in forests", "i go fishing on the lake", "i watch birds on weekends"],
        questions: ["do you spend much time outdoors?", "do you have a garden?", "what do you like to do outside?"],
        statements: ["the weather is lovely today.", "it rained all morning here."],
    },
    Topic {
        facts: ["i play video games all weekend", "i build my own computers", "i play chess online", "i love board games", "i collect retro consoles"],
        questions: ["do you play games?", "what do you do for fun?", "are you into computers?"],
        statements: ["i stayed up too late last night.", "my laptop is acting up."],
    },
    Topic {
        facts: ["i paint with watercolors", "i take photos of old buildings", "i knit scarves for friends", "i make pottery", "i do woodworking in my garage"],
        questions: ["do you have any creative hobbies?", "do you like making things?", "are you artistic?"],
        statements: ["i saw a great art exhibit.", "i bought some craft supplies."],
    },
    Topic {
        facts: ["i live in a big city", "i live on a farm", "i live by the ocean", "i just moved to a new apartment", "i live in a tiny house"],
        questions: ["where do you live now?", "do you like your neighborhood?", "is your home in the city or the country?"],
        statements: ["rent is getting so high.", "my street is noisy at night."],
    },
    Topic {
        facts: ["i drink coffee all day", "i only drink green tea", "i brew my own beer", "i love fruit smoothies", "i do not drink alcohol"],
        questions: ["what do you like to drink?", "are you a coffee or tea person?", "how do you start your mornings?"],
        statements: ["this cafe has good muffins.", "i need more caffeine."],
    },
    Topic {
        facts: ["i am married with two kids", "i just got engaged", "i am recently divorced", "i have a newborn daughter", "i am single and happy"],
        questions: ["are you married?", "do you have kids?", "are you seeing anyone?"],
        statements: ["weddings are so expensive.", "my friend just had a baby."],
    },
    Topic {
        facts: ["i am afraid of heights", "i hate spiders", "i am scared of the dark", "i fear deep water", "i get nervous on planes"],
        questions: ["what are you afraid of?", "what scares you the most?", "do you have any phobias?"],
        statements: ["that scary movie gave me nightmares.", "i do not like storms."],
    },
    Topic {
        facts: ["my favorite color is blue", "i love the color green", "i always wear black", "i painted my room yellow", "purple is my favorite color"],
        questions: ["what is your favorite color?", "what colors do you wear most?", "what color is your room?"],
        statements: ["the sunset was very colorful.", "i bought a new sweater."],
    },
];

const GENERIC_QUESTIONS: [&str; 8] = [
    "tell me about yourself?",
    "what makes you unique?",
    "what is something people do not know about you?",
    "what do you care about most?",
    "how would your friends describe you?",
    "what is a fun fact about you?",
    "what are you passionate about?",
    "what is your life like these days?",
];

const SMALL_TALK: [&str; 24] = [
    "hmm... thank you.",
    "so he can stay put.",
    "spending the night pondering life.",
    "hence the fact that she survived.",
    "maybe she just needs a friend?",
    "get out of my office!",
    "the train leaves at noon.",
    "i told you not to touch that.",
    "who left the door open?",
    "we need to talk about the plan.",
    "that is not what i meant.",
    "where did you put the keys?",
    "the captain wants a report by dawn.",
    "keep your voice down.",
    "is anybody there?",
    "nice to meet you.",
    "okay, sounds good.",
    "ha ha, that is funny.",
    "i see what you mean.",
    "well, that is interesting.",
    "right, of course.",
    "sorry, what did you say?",
    "let us get started then.",
    "anyway, moving on.",
];

const DEFAULT_RESPONSES: [&str; 3] = ["i do not know", "i am not sure what you mean", "hmm, okay"];

/// Knobs for [`SyntheticWorld::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Number of topics contributing facts to the universe (at most 20).
    pub n_topics: usize,
    /// Facts per contributing topic (at most 5).
    pub facts_per_topic: usize,
    pub r0: Option<f64>,
    pub tau: f64,
    pub eta: f64,
    /// Relevance of generic questions to every fact.
    pub generic_relevance: f64,
    /// Relevance of on-topic statements to their topic's facts.
    pub statement_relevance: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_topics: 10,
            facts_per_topic: 3,
            r0: Some(0.5),
            tau: 0.1,
            eta: 0.02,
            generic_relevance: 1.0,
            statement_relevance: 0.3,
        }
    }
}

impl SyntheticSpec {
    /// 100 facts (20 topics × 5), as used by the probe experiment.
    pub fn probe_scale() -> Self {
        Self {
            n_topics: 20,
            facts_per_topic: 5,
            ..Self::default()
        }
    }
}

/// A generated universe, responder, candidate pool and named probe pools.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub universe: Arc<FactUniverse>,
    pub responder: GroundedResponder,
    pub pool: CandidatePool,
    /// `persona_chat` (generic questions), `daily_dialog` (on-topic
    /// questions) and `movie_lines` (small talk), in that order.
    pub probe_pools: Vec<(String, Vec<String>)>,
}

impl SyntheticWorld {
    pub fn build(spec: &SyntheticSpec) -> Result<Self> {
        if spec.n_topics == 0 || spec.n_topics > TOPICS.len() {
            return Err(Error::config(format!(
                "n_topics must be in 1..={}, got {}",
                TOPICS.len(),
                spec.n_topics
            )));
        }
        if spec.facts_per_topic == 0 || spec.facts_per_topic > 5 {
            return Err(Error::config(format!(
                "facts_per_topic must be in 1..=5, got {}",
                spec.facts_per_topic
            )));
        }
        let mut templates = Vec::new();
        let mut fact_topic = Vec::new();
        for (ti, topic) in TOPICS.iter().take(spec.n_topics).enumerate() {
            for fact in topic.facts.iter().take(spec.facts_per_topic) {
                templates.push(fact.to_string());
                fact_topic.push(ti);
            }
        }
        let n = templates.len();
        let universe = FactUniverse::from_texts(templates.iter().cloned())?;

        let mut probes = Vec::new();
        let mut relevance = Vec::new();
        let mut push = |text: &str, row: Vec<f64>| {
            probes.push(text.to_string());
            relevance.push(row);
        };
        let topical_row = |ti: usize, r: f64| -> Vec<f64> {
            fact_topic.iter().map(|&t| if t == ti { r } else { 0.0 }).collect()
        };
        for (ti, topic) in TOPICS.iter().enumerate() {
            for q in topic.questions {
                push(q, topical_row(ti, 1.0));
            }
            for st in topic.statements {
                push(st, topical_row(ti, spec.statement_relevance));
            }
        }
        for q in GENERIC_QUESTIONS {
            push(q, vec![spec.generic_relevance; n]);
        }
        for line in SMALL_TALK {
            push(line, vec![0.0; n]);
        }

        let responder = GroundedResponder::new(GroundedConfig {
            probes: probes.clone(),
            relevance,
            templates,
            default_responses: DEFAULT_RESPONSES.iter().map(|s| s.to_string()).collect(),
            r0: spec.r0,
            tau: spec.tau,
            eta: spec.eta,
        })?;
        let pool = CandidatePool::new(probes)?;
        let probe_pools = vec![
            (
                "persona_chat".to_string(),
                GENERIC_QUESTIONS.iter().map(|s| s.to_string()).collect(),
            ),
            (
                "daily_dialog".to_string(),
                TOPICS
                    .iter()
                    .take(spec.n_topics)
                    .flat_map(|t| t.questions)
                    .map(str::to_string)
                    .collect(),
            ),
            (
                "movie_lines".to_string(),
                SMALL_TALK.iter().map(|s| s.to_string()).collect(),
            ),
        ];
        Ok(Self {
            universe: Arc::new(universe),
            responder,
            pool,
            probe_pools,
        })
    }
}
