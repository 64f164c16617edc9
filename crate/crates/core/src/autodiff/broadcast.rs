//! Index plans for numpy-style broadcasting of binary ops.

#[derive(Debug, Clone)]
enum Pattern {
    Same,
    /// `b` repeats every `b.len()` elements (trailing-axes broadcast, e.g. a bias row).
    BTiled(usize),
    /// `a` repeats every `a.len()` elements.
    ATiled(usize),
    General { sa: Vec<usize>, sb: Vec<usize> },
}

#[derive(Debug, Clone)]
pub(super) struct Broadcast {
    out: Vec<usize>,
    numel: usize,
    pattern: Pattern,
}

fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let pad = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[pad + d] = if shape[d] == 1 && out[pad + d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

impl Broadcast {
    pub(super) fn new(a: &[usize], b: &[usize]) -> Option<Self> {
        let rank = a.len().max(b.len());
        let mut out = vec![0; rank];
        for d in 0..rank {
            let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
            let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
            out[d] = match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return None,
            };
        }
        let numel = out.iter().product();
        let na: usize = a.iter().product();
        let nb: usize = b.iter().product();
        let is_suffix = |s: &[usize]| {
            let t: Vec<usize> = s.iter().copied().skip_while(|&d| d == 1).collect();
            out.ends_with(&t)
        };
        let pattern = if a == b {
            Pattern::Same
        } else if na == numel && is_suffix(b) {
            Pattern::BTiled(nb)
        } else if nb == numel && is_suffix(a) {
            Pattern::ATiled(na)
        } else {
            Pattern::General { sa: aligned_strides(a, &out), sb: aligned_strides(b, &out) }
        };
        Some(Self { out, numel, pattern })
    }

    pub(super) fn out_shape(&self) -> &[usize] {
        &self.out
    }

    pub(super) fn numel(&self) -> usize {
        self.numel
    }

    /// Calls `f(out_offset, a_offset, b_offset)` for every output element in order.
    #[inline]
    pub(super) fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        match &self.pattern {
            Pattern::Same => (0..self.numel).for_each(|o| f(o, o, o)),
            Pattern::BTiled(nb) => {
                let nb = (*nb).max(1);
                for base in (0..self.numel).step_by(nb) {
                    for j in 0..nb {
                        f(base + j, base + j, j);
                    }
                }
            }
            Pattern::ATiled(na) => {
                let na = (*na).max(1);
                for base in (0..self.numel).step_by(na) {
                    for j in 0..na {
                        f(base + j, j, base + j);
                    }
                }
            }
            Pattern::General { sa, sb } => {
                if self.numel == 0 {
                    return;
                }
                let rank = self.out.len();
                let mut idx = vec![0usize; rank];
                let (mut ia, mut ib) = (0usize, 0usize);
                for o in 0..self.numel {
                    f(o, ia, ib);
                    for d in (0..rank).rev() {
                        idx[d] += 1;
                        ia += sa[d];
                        ib += sb[d];
                        if idx[d] < self.out[d] {
                            break;
                        }
                        ia -= sa[d] * self.out[d];
                        ib -= sb[d] * self.out[d];
                        idx[d] = 0;
                    }
                }
            }
        }
    }
}
