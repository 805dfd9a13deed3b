use fixedbitset::FixedBitSet;

/// Row-selection bitmap over a dataset. Its length always equals the
/// dataset's row count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMask {
    bits: FixedBitSet,
}

impl RowMask {
    pub fn empty(len: usize) -> Self {
        Self {
            bits: FixedBitSet::with_capacity(len),
        }
    }

    pub fn full(len: usize) -> Self {
        let mut bits = FixedBitSet::with_capacity(len);
        bits.insert_range(..);
        Self { bits }
    }

    pub fn from_fn(len: usize, mut pred: impl FnMut(usize) -> bool) -> Self {
        let mut mask = Self::empty(len);
        for row in 0..len {
            if pred(row) {
                mask.bits.insert(row);
            }
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn contains(&self, row: usize) -> bool {
        self.bits.contains(row)
    }

    pub fn set(&mut self, row: usize, value: bool) {
        self.bits.set(row, value);
    }

    pub fn intersect_with(&mut self, other: &RowMask) {
        debug_assert_eq!(self.len(), other.len());
        self.bits.intersect_with(&other.bits);
    }

    pub fn union_with(&mut self, other: &RowMask) {
        debug_assert_eq!(self.len(), other.len());
        self.bits.union_with(&other.bits);
    }

    pub fn difference_with(&mut self, other: &RowMask) {
        debug_assert_eq!(self.len(), other.len());
        self.bits.difference_with(&other.bits);
    }

    /// Number of rows set here but not in `other`, without allocating.
    pub fn count_difference(&self, other: &RowMask) -> usize {
        self.bits.difference_count(&other.bits)
    }

    pub fn is_subset(&self, other: &RowMask) -> bool {
        self.bits.is_subset(&other.bits)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }
}
