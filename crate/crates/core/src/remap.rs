/// Describes how a Gaussian list was edited: for each entry of the new list,
/// the index it came from in the old list (`None` for newly created ones).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Remap {
    new_to_old: Vec<Option<usize>>,
    old_len: usize,
}

impl Remap {
    pub fn identity(n: usize) -> Self {
        Remap {
            new_to_old: (0..n).map(Some).collect(),
            old_len: n,
        }
    }

    pub fn new(new_to_old: Vec<Option<usize>>, old_len: usize) -> Self {
        debug_assert!(new_to_old.iter().flatten().all(|&o| o < old_len));
        Remap { new_to_old, old_len }
    }

    pub fn new_to_old(&self) -> &[Option<usize>] {
        &self.new_to_old
    }

    /// Position of every old entry in the new list, `None` if removed.
    pub fn old_to_new(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.old_len];
        for (new, old) in self.new_to_old.iter().enumerate() {
            if let Some(old) = old {
                out[*old] = Some(new);
            }
        }
        out
    }

    pub fn old_len(&self) -> usize {
        self.old_len
    }

    pub fn new_len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_identity(&self) -> bool {
        self.old_len == self.new_to_old.len() && self.new_to_old.iter().enumerate().all(|(i, o)| *o == Some(i))
    }

    /// Applies the edit to a per-Gaussian buffer; new entries come from `fill`.
    pub fn apply<T: Clone>(&self, old: &[T], mut fill: impl FnMut() -> T) -> Vec<T> {
        assert_eq!(old.len(), self.old_len, "buffer does not match remap source");
        self.new_to_old
            .iter()
            .map(|o| match o {
                Some(i) => old[*i].clone(),
                None => fill(),
            })
            .collect()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Remap) -> Remap {
        assert_eq!(next.old_len, self.new_len());
        Remap {
            new_to_old: next.new_to_old.iter().map(|o| o.and_then(|i| self.new_to_old[i])).collect(),
            old_len: self.old_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_and_inverse() {
        let a = Remap::new(vec![Some(0), Some(2), None], 3);
        let b = Remap::new(vec![Some(2), Some(1)], 3);
        let c = a.then(&b);
        assert_eq!(c.new_to_old(), &[None, Some(2)]);
        assert_eq!(a.old_to_new(), vec![Some(0), None, Some(1)]);
        assert_eq!(a.apply(&[10, 11, 12], || 0), vec![10, 12, 0]);
        assert!(Remap::identity(4).is_identity());
    }
}
