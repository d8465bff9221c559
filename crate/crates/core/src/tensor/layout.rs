use crate::error::{PotError, Result};

use super::Tensor;

/// Partition of each column of a `d_out x d_in` matrix into contiguous row
/// groups of `group_size`. The last group of a column may be shorter.
///
/// Elements `(i, j)` and `(k, j)` share a scale iff `i / G == k / G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    d_out: usize,
    d_in: usize,
    group_size: usize,
}

/// One group of a column, with its values copied out in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub group: usize,
    pub column: usize,
    pub values: Vec<f64>,
}

impl GroupLayout {
    pub fn new(d_out: usize, d_in: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(PotError::InvalidConfig(
                "group size must be at least 1".into(),
            ));
        }
        if d_out == 0 || d_in == 0 {
            return Err(PotError::InvalidShape(format!(
                "matrix dims must be positive, got {d_out}x{d_in}"
            )));
        }
        Ok(GroupLayout {
            d_out,
            d_in,
            group_size,
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups_per_column(&self) -> usize {
        self.d_out.div_ceil(self.group_size)
    }

    pub fn num_groups(&self) -> usize {
        self.groups_per_column() * self.d_in
    }

    #[inline]
    pub fn group_of_row(&self, row: usize) -> usize {
        row / self.group_size
    }

    /// Rows covered by `group`; the last one may be ragged.
    pub fn group_rows(&self, group: usize) -> std::ops::Range<usize> {
        let start = group * self.group_size;
        start..(start + self.group_size).min(self.d_out)
    }

    /// Flat index of `(group, column)` in scale order: column-major, groups
    /// ascending within a column.
    #[inline]
    pub fn scale_index(&self, group: usize, column: usize) -> usize {
        column * self.groups_per_column() + group
    }

    #[inline]
    pub fn scale_index_of(&self, row: usize, column: usize) -> usize {
        self.scale_index(self.group_of_row(row), column)
    }

    pub fn check_matrix(&self, w: &Tensor) -> Result<()> {
        let (r, c) = w.shape2()?;
        if (r, c) != (self.d_out, self.d_in) {
            return Err(PotError::DimensionMismatch(format!(
                "layout is {}x{}, tensor is {r}x{c}",
                self.d_out, self.d_in
            )));
        }
        Ok(())
    }

    /// Every group of `w`, columns ascending and groups ascending within a
    /// column. Each element appears in exactly one group.
    pub fn iter_groups<'a>(&'a self, w: &'a Tensor) -> Result<impl Iterator<Item = Group> + 'a> {
        self.check_matrix(w)?;
        let gpc = self.groups_per_column();
        Ok((0..self.d_in).flat_map(move |column| {
            (0..gpc).map(move |group| Group {
                group,
                column,
                values: self.group_values(w, group, column),
            })
        }))
    }

    pub(crate) fn group_values(&self, w: &Tensor, group: usize, column: usize) -> Vec<f64> {
        self.group_rows(group)
            .map(|i| w.get_flat(i * self.d_in + column))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|v| v as f32).collect();
        Tensor::from_f32(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn group_counts() {
        let w = matrix(4, 2);
        let l = GroupLayout::new(4, 2, 2).unwrap();
        let groups: Vec<_> = l.iter_groups(&w).unwrap().collect();
        assert_eq!(groups.len(), 4);
        assert!(groups.iter().all(|g| g.values.len() == 2));
        // column-major order
        assert_eq!(groups[0].values, vec![0.0, 2.0]);
        assert_eq!(groups[1].values, vec![4.0, 6.0]);
        assert_eq!((groups[2].group, groups[2].column), (0, 1));
    }

    #[test]
    fn ragged_tail() {
        let w = matrix(5, 1);
        let l = GroupLayout::new(5, 1, 2).unwrap();
        let lens: Vec<_> = l.iter_groups(&w).unwrap().map(|g| g.values.len()).collect();
        assert_eq!(lens, vec![2, 2, 1]);
    }

    #[test]
    fn single_group_of_128() {
        let w = matrix(128, 1);
        let l = GroupLayout::new(128, 1, 128).unwrap();
        assert_eq!(l.iter_groups(&w).unwrap().count(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let w = matrix(4, 3);
        let l = GroupLayout::new(4, 2, 2).unwrap();
        assert!(matches!(
            l.iter_groups(&w),
            Err(PotError::DimensionMismatch(_))
        ));
        assert!(GroupLayout::new(4, 2, 0).is_err());
    }

    #[test]
    fn scale_sharing_rule() {
        let l = GroupLayout::new(10, 3, 4).unwrap();
        for j in 0..3 {
            for i in 0..10 {
                for k in 0..10 {
                    let same = l.scale_index_of(i, j) == l.scale_index_of(k, j);
                    assert_eq!(same, i / 4 == k / 4);
                }
            }
        }
    }
}
