use rand::seq::SliceRandom;

use super::LabeledSet;
use crate::error::{DseError, Result};
use crate::rng;

/// Per label, `shots` items into the support set and `shots` other items into
/// the validation set, sampled without replacement. Both sets keep the full
/// label space and list items grouped by label id.
pub fn sample_few_shot(full: &LabeledSet, shots: usize, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    full.validate()?;
    if shots == 0 {
        return Err(DseError::config("shots", "must be >= 1"));
    }
    let mut support = LabeledSet {
        items: Vec::new(),
        label_names: full.label_names.clone(),
    };
    let mut validation = support.clone();
    for (label, name) in full.label_names.iter().enumerate() {
        let mut members: Vec<&(String, usize)> = full.items.iter().filter(|(_, l)| *l == label).collect();
        if members.len() < 2 * shots {
            return Err(DseError::Invalid(format!(
                "label {name:?} has {} items, needs {} for {shots}-shot support and validation",
                members.len(),
                2 * shots
            )));
        }
        let mut rng = rng::rng_from(seed, &[0xF5, label as u64]);
        members.shuffle(&mut rng);
        support.items.extend(members[..shots].iter().map(|&x| x.clone()));
        validation.items.extend(members[shots..2 * shots].iter().map(|&x| x.clone()));
    }
    Ok((support, validation))
}
