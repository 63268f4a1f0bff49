//! Quadrature rules: composite Gauss-Legendre for smooth inner products and
//! composite Simpson weights for data sampled on uniform grids.

/// Abscissae of the 10-point Gauss-Legendre rule on [-1, 1] (positive half).
const GL10_X: [f64; 5] = [
    0.148_874_338_981_631_21,
    0.433_395_394_129_247_19,
    0.679_409_568_299_024_41,
    0.865_063_366_688_984_51,
    0.973_906_528_517_171_72,
];

/// Weights paired with `GL10_X`.
const GL10_W: [f64; 5] = [
    0.295_524_224_714_752_87,
    0.269_266_719_309_996_36,
    0.219_086_362_515_982_04,
    0.149_451_349_150_580_59,
    0.066_671_344_308_688_14,
];

/// Composite quadrature rule: explicit nodes and weights on [a, b].
#[derive(Debug, Clone)]
pub struct QuadRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadRule {
    /// Composite 10-point Gauss-Legendre rule with at least `min_nodes` nodes.
    /// Exact for polynomials of degree 19 on each panel.
    pub fn gauss_legendre(a: f64, b: f64, min_nodes: usize) -> Self {
        assert!(b > a, "empty interval");
        let panels = min_nodes.div_ceil(10).max(1);
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * 10);
        let mut weights = Vec::with_capacity(panels * 10);
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * width;
            let half = 0.5 * width;
            for i in (0..5).rev() {
                nodes.push(mid - half * GL10_X[i]);
                weights.push(half * GL10_W[i]);
            }
            for i in 0..5 {
                nodes.push(mid + half * GL10_X[i]);
                weights.push(half * GL10_W[i]);
            }
        }
        QuadRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Weights of a composite Simpson rule over `n_points` equispaced values with
/// spacing `h`. An odd interval count blends in a 3/8 panel at the right end so
/// the rule stays fourth-order. Degenerates to trapezoid for a single interval.
pub fn simpson_weights(n_points: usize, h: f64) -> Vec<f64> {
    assert!(n_points >= 2, "need at least two points");
    let n = n_points - 1;
    let mut w = vec![0.0; n_points];
    if n == 1 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    // split: even prefix of n-3 intervals plus one 3/8 panel when n is odd
    let prefix = if n % 2 == 0 { n } else { n - 3 };
    if prefix > 0 {
        w[0] += h / 3.0;
        w[prefix] += h / 3.0;
        for i in (1..prefix).step_by(2) {
            w[i] += 4.0 * h / 3.0;
        }
        for i in (2..prefix).step_by(2) {
            w[i] += 2.0 * h / 3.0;
        }
    }
    if n % 2 == 1 {
        let c = 3.0 * h / 8.0;
        w[prefix] += c;
        w[prefix + 1] += 3.0 * c;
        w[prefix + 2] += 3.0 * c;
        w[prefix + 3] += c;
    }
    w
}

/// Integral of uniformly sampled values with spacing `h` via `simpson_weights`.
pub fn simpson_integrate(values: &[f64], h: f64) -> f64 {
    let w = simpson_weights(values.len(), h);
    values.iter().zip(&w).map(|(v, w)| v * w).sum()
}
