//! Uniform one-dimensional grids and the piecewise-linear interpolation rule
//! used for value functions.

#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
}

impl UniformGrid {
    /// `n >= 2` equally spaced nodes from `lo` to `hi`, both included.
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 2 && lo < hi, "grid needs n >= 2 and lo < hi");
        let last = (n - 1) as f64;
        let nodes = (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * (i as f64 / last)
                }
            })
            .collect();
        Self { lo, hi, nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.len() - 1) as f64
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Cell index `i` and weight `t` with `x = (1 - t) node[i] + t node[i+1]`.
    /// Points at most a few ulps outside the range are clamped.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let slack = 4.0 * f64::EPSILON * self.lo.abs().max(self.hi.abs()).max(1.0);
        if !(x >= self.lo - slack && x <= self.hi + slack) {
            return None;
        }
        let x = x.clamp(self.lo, self.hi);
        let cells = self.len() - 1;
        let pos = (x - self.lo) / self.spacing();
        let mut i = (pos.floor() as usize).min(cells - 1);
        // Correct for rounding in `pos` so that node[i] <= x <= node[i+1].
        if x < self.nodes[i] && i > 0 {
            i -= 1;
        } else if x > self.nodes[i + 1] && i + 1 < cells {
            i += 1;
        }
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
        Some((i, t))
    }

    /// Piecewise-linear interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Option<f64> {
        debug_assert_eq!(values.len(), self.len());
        self.locate(x).map(|(i, t)| lerp(values[i], values[i + 1], t))
    }

    /// Index of the node closest to `x` (ties to the lower node).
    pub fn nearest(&self, x: f64) -> Option<usize> {
        self.locate(x).map(|(i, t)| if t > 0.5 { i + 1 } else { i })
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        a + t * (b - a)
    }
}
