use crate::volume::{LabelSet, Mask};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceScore {
    pub value: f64,
    /// Both selections were empty; `value` is then defined as 1.
    pub both_empty: bool,
}

/// `2|A ∩ B| / (|A| + |B|)` over voxels whose label is in `set`.
pub fn dice(a: &Mask, b: &Mask, set: LabelSet) -> Result<DiceScore> {
    a.ensure_aligned(b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (set.contains(la), set.contains(lb));
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(DiceScore { value: 1.0, both_empty: true });
    }
    Ok(DiceScore { value: 2.0 * both as f64 / (na + nb) as f64, both_empty: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mask(labels: &[u8]) -> Mask {
        Mask::new([labels.len(), 1, 1], [1.0; 3], labels.to_vec()).unwrap()
    }

    #[test]
    fn formula_cases() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dice(&a, &a, LabelSet::TUMOR).unwrap().value, 1.0);
        assert_eq!(dice(&a, &mask(&[0, 0, 2, 2]), LabelSet::TUMOR).unwrap().value, 0.0);
        assert_eq!(dice(&a, &mask(&[0, 1, 1, 0]), LabelSet::TUMOR).unwrap().value, 0.5);
    }

    #[test]
    fn region_selection_and_empty() {
        let a = mask(&[1, 2, 0]);
        let b = mask(&[2, 2, 0]);
        assert_eq!(dice(&a, &b, LabelSet::TUMOR).unwrap().value, 1.0);
        assert_eq!(dice(&a, &b, LabelSet::EXTRAMEATAL).unwrap().value, 2.0 / 3.0);
        let e = mask(&[0, 0, 0]);
        assert_eq!(dice(&e, &e, LabelSet::TUMOR).unwrap(), DiceScore { value: 1.0, both_empty: true });
        let other = Mask::new([3, 1, 1], [2.0, 1.0, 1.0], vec![0; 3]).unwrap();
        assert!(dice(&e, &other, LabelSet::TUMOR).is_err());
    }
}
