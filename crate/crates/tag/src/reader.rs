use serde::{Deserialize, Serialize};

/// 13.56 MHz, carried as metadata only.
pub const CARRIER_HZ: u32 = 13_560_000;
pub const MIN_RANGE_CM: u16 = 9;
pub const MAX_RANGE_CM: u16 = 40;

/// Physical parameters of one reader: how far it reaches and how many tags
/// it can inventory in one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderFieldModel {
    range_cm: u16,
    capacity: usize,
}

impl ReaderFieldModel {
    pub fn new(range_cm: u16, capacity: usize) -> Option<Self> {
        ((MIN_RANGE_CM..=MAX_RANGE_CM).contains(&range_cm) && capacity >= 1).then_some(Self { range_cm, capacity })
    }

    pub fn range_cm(&self) -> u16 {
        self.range_cm
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn in_range(&self, distance_cm: u16) -> bool {
        distance_cm <= self.range_cm
    }
}

impl Default for ReaderFieldModel {
    fn default() -> Self {
        Self {
            range_cm: 20,
            capacity: 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_bounds() {
        assert!(ReaderFieldModel::new(8, 1).is_none());
        assert!(ReaderFieldModel::new(41, 1).is_none());
        assert!(ReaderFieldModel::new(9, 0).is_none());
        let r = ReaderFieldModel::new(40, 2).unwrap();
        assert!(r.in_range(40));
        assert!(!r.in_range(41));
    }
}
