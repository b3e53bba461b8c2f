//! The fixed test-function dictionary used for distances in `d >= 2` and for
//! the limit metrics of the approximation pipeline.

use crate::testfn::TestFunction;

pub const DICTIONARY_VERSION: &str = "dict-v1";
pub const DICTIONARY_SIZE: usize = 64;
const GAUSSIANS: usize = 48;

/// Fractional parts of square roots of the first primes, one per coordinate.
const IRRATIONALS: [f64; 8] = [
    0.414_213_562_373_095,
    0.732_050_807_568_877,
    0.236_067_977_499_79,
    0.645_751_311_064_591,
    0.316_624_790_355_4,
    0.605_551_275_463_989,
    0.123_105_625_617_661,
    0.358_898_943_540_674,
];

/// One dictionary entry: an isotropic Gaussian or a bump in one coordinate,
/// both with peak 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DictionaryEntry {
    pub center: Vec<f64>,
    pub width: f64,
    /// `Some(axis)` for a coordinate bump.
    pub axis: Option<usize>,
}

impl DictionaryEntry {
    pub fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = match self.axis {
            Some(j) => (x[j] - self.center[j]).powi(2),
            None => x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum(),
        };
        (-0.5 * r2 / (self.width * self.width)).exp()
    }

    /// `sup |grad f| = 1 / (w sqrt(e))`.
    pub fn lipschitz(&self) -> f64 {
        1.0 / (self.width * std::f64::consts::E.sqrt())
    }

    pub fn test_function(&self) -> TestFunction {
        match self.axis {
            None => TestFunction::gaussian_bump(self.center.clone(), self.width, 1.0),
            Some(j) => {
                let d = self.center.len();
                let (c, w2) = (self.center[j], self.width * self.width);
                let e = move |x: &[f64]| (-0.5 * (x[j] - c).powi(2) / w2).exp();
                TestFunction::stationary(
                    d,
                    move |x| e(x),
                    move |x, g| {
                        g.fill(0.0);
                        g[j] = -(x[j] - c) / w2 * e(x);
                    },
                    move |x, h| {
                        h.fill(0.0);
                        h[j * d + j] = ((x[j] - c).powi(2) / (w2 * w2) - 1.0 / w2) * e(x);
                    },
                )
            }
        }
    }
}

/// The 64 entries for a box of half width `half_width` in dimension `dim`:
/// 48 Gaussians on a Kronecker sequence with widths `L/16, L/8, L/4`, then 16
/// coordinate bumps of width `L/8` cycling over the axes.
pub fn dictionary(dim: usize, half_width: f64) -> Vec<DictionaryEntry> {
    let l = half_width;
    let mut out = Vec::with_capacity(DICTIONARY_SIZE);
    for k in 0..GAUSSIANS {
        let center = (0..dim)
            .map(|j| {
                let a = IRRATIONALS[j % IRRATIONALS.len()] + (j / IRRATIONALS.len()) as f64 * 0.1;
                0.5 * l * (2.0 * ((k + 1) as f64 * a).fract() - 1.0)
            })
            .collect();
        out.push(DictionaryEntry { center, width: l / 16.0 * [1.0, 2.0, 4.0][k % 3], axis: None });
    }
    for k in 0..DICTIONARY_SIZE - GAUSSIANS {
        let axis = k % dim;
        let mut center = vec![0.0; dim];
        center[axis] = 0.75 * l * (2.0 * (k as f64 + 0.5) / 16.0 - 1.0);
        out.push(DictionaryEntry { center, width: l / 8.0, axis: Some(axis) });
    }
    out
}

/// Largest Lipschitz constant in the dictionary.
pub fn dictionary_lipschitz(entries: &[DictionaryEntry]) -> f64 {
    entries.iter().map(DictionaryEntry::lipschitz).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_is_fixed() {
        let d = dictionary(2, 8.0);
        assert_eq!(d.len(), DICTIONARY_SIZE);
        assert_eq!(d, dictionary(2, 8.0));
        assert!(d.iter().all(|e| e.center.iter().all(|c| c.abs() <= 6.0)));
        assert!((dictionary_lipschitz(&d) - 2.0 / std::f64::consts::E.sqrt()).abs() < 1e-12);
        let pts = vec![vec![0.3, -0.2], vec![1.0, 2.0]];
        for e in [&d[0], &d[50]] {
            e.test_function().check_derivatives(0.0, &pts, 1e-5).unwrap();
            assert!((e.test_function().value(0.0, &pts[1]) - e.value(&pts[1])).abs() < 1e-15);
        }
    }
}
