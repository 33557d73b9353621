//! Conversation synthesis: deterministic template fills that embed each
//! symptom verbatim exactly once amid non-symptom dispatcher/caller turns,
//! plus the augmentation generator producing (noisy conversation,
//! canonical symptom) training pairs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::domain::DatasetStage;

use super::corrupt::corrupt_symptom_tokens;
use super::{NormalizerError, Transcript};

struct Template {
    openers: &'static [&'static str],
    bridges: &'static [&'static str],
    carriers: &'static [&'static str],
    closers: &'static [&'static str],
}

// Filler vocabulary deliberately avoids lexicon terms and their near
// neighbors so clean synthesized conversations extract exactly the
// injected symptoms.
static TEMPLATES: &[Template] = &[
    Template {
        openers: &[
            "operator nine one one what is your emergency",
            "operator nine one one please state your emergency",
        ],
        bridges: &[
            "caller please hurry he does not look good",
            "operator okay help is on the way stay with me",
            "caller i am trying to keep him still",
        ],
        carriers: &[
            "caller i think he has {}",
            "caller it looks like {}",
            "caller they told me it might be {}",
        ],
        closers: &[
            "operator the crew is five minutes out keep him comfortable",
            "operator stay on the line until the crew arrives",
        ],
    },
    Template {
        openers: &[
            "operator emergency services how can i help you",
            "operator dispatch speaking what happened",
        ],
        bridges: &[
            "caller my wife collapsed in the kitchen a moment ago",
            "operator i am sending a unit to your address now",
            "caller she is awake but very quiet",
        ],
        carriers: &[
            "caller she keeps complaining about {}",
            "caller i noticed {} a few minutes ago",
            "caller the main thing i see is {}",
        ],
        closers: &[
            "operator keep her still and unlock the front door",
            "operator do not give her anything to drink until the unit arrives",
        ],
    },
    Template {
        openers: &[
            "operator nine one one do you need police fire or medical",
            "operator nine one one what is the address of the emergency",
        ],
        bridges: &[
            "caller the address is twelve maple street apartment four",
            "caller my neighbor is on the floor and i do not know what to do",
            "operator a unit has been dispatched to your location",
        ],
        carriers: &[
            "caller the patient is presenting {}",
            "caller i would describe it as {}",
            "caller it started an hour ago with {}",
        ],
        closers: &[
            "operator i will stay on the line with you until they arrive",
            "operator you are doing great they are almost there",
        ],
    },
    Template {
        openers: &["operator medical dispatch is the patient awake"],
        bridges: &[
            "caller yes but he is not making much sense",
            "caller my father is seventy two and was by himself",
            "operator copy that the ambulance is en route",
        ],
        carriers: &[
            "caller he told me about {}",
            "caller what worries me most is {}",
            "caller he mentioned {} before he sat down",
        ],
        closers: &["operator keep talking to him and watch his condition until the crew arrives"],
    },
    Template {
        openers: &["operator nine one one is this about the same incident on oak avenue"],
        bridges: &[
            "caller no this is a new emergency at the school gym",
            "caller a student went down during practice",
            "operator understood medical is rolling to the gym now",
        ],
        carriers: &[
            "caller the coach says it could be {}",
            "caller from here it looks like {}",
            "caller the nurse wrote down {}",
        ],
        closers: &["operator have someone meet the crew at the main entrance"],
    },
    Template {
        openers: &["operator nine one one please tell me exactly what happened"],
        bridges: &[
            "caller we were having dinner when my uncle slumped over",
            "caller he is breathing i mean he is awake now",
            "operator good keep him sitting upright if you can",
        ],
        carriers: &[
            "caller he says it feels like {}",
            "caller the biggest problem is {}",
            "caller earlier today he had {}",
        ],
        closers: &["operator the ambulance should be pulling up any moment now"],
    },
];

/// How many synthesis templates ship with the crate.
pub const TEMPLATE_COUNT: usize = 6;

fn pick<'a>(rng: &mut ChaCha8Rng, bank: &'a [&'static str]) -> &'a str {
    bank[rng.gen_range(0..bank.len())]
}

/// Deterministic template fill: each symptom embedded verbatim exactly
/// once, surrounded by non-symptom turns chosen by the seed.
pub fn synthesize_conversation(
    symptoms: &[String],
    template_id: usize,
    seed: u64,
) -> Result<Transcript, NormalizerError> {
    if symptoms.is_empty() {
        return Err(NormalizerError::EmptySymptoms);
    }
    let template = TEMPLATES
        .get(template_id)
        .ok_or(NormalizerError::UnknownTemplate(template_id))?;
    let mut rng =
        ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &format!("synth-{template_id}")));
    let mut turns = vec![pick(&mut rng, template.openers).to_string()];
    for symptom in symptoms {
        turns.push(pick(&mut rng, template.bridges).to_string());
        turns.push(pick(&mut rng, template.carriers).replace("{}", symptom));
    }
    turns.push(pick(&mut rng, template.closers).to_string());
    Transcript::new(turns.join(" "), DatasetStage::Text3)
}

/// Synthesizes a conversation whose template and filler choices are a
/// function of the symptom content, so identical symptom lists yield
/// identical conversations (duplicate inputs collapse to duplicate texts).
pub fn conversation_for_symptoms(
    symptoms: &[String],
    base_seed: u64,
) -> Result<Transcript, NormalizerError> {
    let joined = symptoms.join(" ");
    let content_seed = crate::derive_seed(base_seed, &joined);
    let template_id = (content_seed % TEMPLATE_COUNT as u64) as usize;
    synthesize_conversation(symptoms, template_id, content_seed)
}

/// One augmentation pair: X is a conversation carrying a corrupted
/// symptom, Y the canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub conversation: Transcript,
    pub target: String,
}

/// Builds `n_pairs` (X, Y) pairs from the symptom bank and splits them
/// 4:1 deterministically (every fifth pair goes to validation).
pub fn build_augmented_pairs(
    symptom_bank: &[String],
    n_pairs: usize,
    seed: u64,
) -> Result<(Vec<AugmentedPair>, Vec<AugmentedPair>), NormalizerError> {
    if symptom_bank.is_empty() {
        return Err(NormalizerError::EmptySymptoms);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "augment"));
    let mut train = Vec::new();
    let mut val = Vec::new();
    for k in 0..n_pairs {
        let symptom = symptom_bank[rng.gen_range(0..symptom_bank.len())].clone();
        let corrupted = corrupt_symptom_tokens(&symptom, &[symptom.clone()], 2, rng.gen());
        let template_id = rng.gen_range(0..TEMPLATE_COUNT);
        let clean = synthesize_conversation(&[corrupted], template_id, rng.gen())?;
        let conversation = Transcript { text: clean.text, stage: DatasetStage::Text5 };
        let pair = AugmentedPair { conversation, target: symptom };
        if k % 5 == 4 {
            val.push(pair);
        } else {
            train.push(pair);
        }
    }
    Ok((train, val))
}
