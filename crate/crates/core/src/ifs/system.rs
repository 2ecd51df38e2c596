use rand::Rng;

use super::map::{ConformalMap, MapSpec};
use crate::error::{Error, Result};
use crate::rng;

/// A word over the alphabet {0..n-1}; f_w = f_{w[0]} ∘ … ∘ f_{w[m-1]}.
/// Symbols are 0-based in code and printed 1-based in reports.
pub type Word = Vec<usize>;

pub const DEFAULT_INDUCE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IfsOptions {
    pub allow_reversing: bool,
    /// Reject attractors whose hull touches 0 or 1. Off by default because the
    /// standard Cantor and dyadic examples have 0 and 1 in their attractors.
    pub require_interior: bool,
}

impl Default for IfsOptions {
    fn default() -> Self {
        IfsOptions { allow_reversing: false, require_interior: false }
    }
}

impl IfsOptions {
    pub fn reversing() -> Self {
        IfsOptions { allow_reversing: true, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// sup |f'| over all maps
    pub rho: f64,
    /// min inf |f'|
    pub rho_min: f64,
    /// min(-log|f'|)
    pub d_min: f64,
    /// max(-log|f'|)
    pub d_max: f64,
}

#[derive(Debug, Clone)]
pub struct Ifs {
    maps: Vec<ConformalMap>,
    constants: Constants,
    hull: (f64, f64),
    /// For each hull endpoint (0 = lo, 1 = hi): the symbol whose image attains
    /// it and which endpoint of the hull that symbol maps there.
    endpoint_code: [(usize, usize); 2],
    options: IfsOptions,
    /// Base-alphabet word of each map (length 1 unless induced).
    labels: Vec<Word>,
}

impl Ifs {
    pub fn from_specs(specs: &[MapSpec], options: IfsOptions) -> Result<Ifs> {
        let maps = specs.iter().cloned().map(ConformalMap::from_spec).collect::<Result<Vec<_>>>()?;
        Ifs::new(maps, options)
    }

    /// Validate a family of maps and compute its constants.
    pub fn new(maps: Vec<ConformalMap>, options: IfsOptions) -> Result<Ifs> {
        let labels = (0..maps.len()).map(|i| vec![i]).collect();
        Ifs::with_labels(maps, labels, options)
    }

    fn with_labels(maps: Vec<ConformalMap>, labels: Vec<Word>, options: IfsOptions) -> Result<Ifs> {
        if maps.len() < 2 {
            return Err(Error::Invalid("an IFS needs at least two maps".into()));
        }
        if !options.allow_reversing && maps.iter().any(|m| m.is_reversing()) {
            return Err(Error::OrientationReversing);
        }
        let fixed: Vec<f64> = maps.iter().map(|m| m.fixed_point()).collect();
        if fixed.iter().all(|&p| (p - fixed[0]).abs() < 1e-12) {
            return Err(Error::SharedFixedPoint(fixed[0]));
        }
        let rho = maps.iter().map(|m| m.sup_deriv()).fold(0.0, f64::max);
        let rho_min = maps.iter().map(|m| m.inf_deriv()).fold(f64::INFINITY, f64::min);
        let constants = Constants { rho, rho_min, d_min: -rho.ln(), d_max: -rho_min.ln() };
        let (hull, endpoint_code) = attractor_hull(&maps);
        if options.require_interior && (hull.0 <= 1e-12 || hull.1 >= 1.0 - 1e-12) {
            return Err(Error::EndpointInAttractor(hull.0, hull.1));
        }
        Ok(Ifs { maps, constants, hull, endpoint_code, options, labels })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[ConformalMap] {
        &self.maps
    }

    pub fn map(&self, a: usize) -> &ConformalMap {
        &self.maps[a]
    }

    pub fn constants(&self) -> Constants {
        self.constants
    }

    pub fn rho(&self) -> f64 {
        self.constants.rho
    }

    pub fn options(&self) -> IfsOptions {
        self.options
    }

    pub fn labels(&self) -> &[Word] {
        &self.labels
    }

    pub fn is_reversing(&self) -> bool {
        self.maps.iter().any(|m| m.is_reversing())
    }

    pub fn is_affine(&self) -> bool {
        self.maps.iter().all(|m| m.is_affine())
    }

    /// Convex hull of the attractor.
    pub fn hull(&self) -> (f64, f64) {
        self.hull
    }

    /// Distance from the attractor hull to {0, 1}.
    pub fn endpoint_margin(&self) -> f64 {
        self.hull.0.min(1.0 - self.hull.1)
    }

    /// Coding base point x₀: midpoint of the attractor hull.
    pub fn base_point(&self) -> f64 {
        0.5 * (self.hull.0 + self.hull.1)
    }

    /// First k symbols of a code of the lower (`which = 0`) or upper hull endpoint.
    pub fn endpoint_code(&self, which: usize, k: usize) -> Word {
        let mut e = which;
        let mut w = Vec::with_capacity(k);
        for _ in 0..k {
            let (sym, next) = self.endpoint_code[e];
            w.push(sym);
            e = next;
        }
        w
    }

    fn check_word(&self, w: &[usize]) {
        assert!(w.iter().all(|&a| a < self.maps.len()), "symbol out of range in {w:?}");
    }

    /// f_w(x), innermost symbol applied first.
    pub fn apply_word(&self, w: &[usize], x: f64) -> f64 {
        w.iter().rev().fold(x, |y, &a| self.maps[a].eval(y))
    }

    /// log|f_w'(x)| accumulated along the word.
    pub fn log_abs_deriv_word(&self, w: &[usize], x: f64) -> f64 {
        let mut y = x;
        let mut acc = 0.0;
        for &a in w.iter().rev() {
            acc += self.maps[a].log_abs_deriv(y);
            y = self.maps[a].eval(y);
        }
        acc
    }

    /// (log|f_w'|)'(x) via the chain rule, without forming f_w''.
    pub fn log_slope_word(&self, w: &[usize], x: f64) -> f64 {
        let (mut y, mut inner, mut acc) = (x, 1.0, 0.0);
        for &a in w.iter().rev() {
            let m = &self.maps[a];
            let j = m.jet(y);
            acc += j.d2 / j.d1 * inner;
            inner *= j.d1;
            y = j.f;
        }
        acc
    }

    /// Sample a word of length m from the product measure p^m.
    pub fn random_word<R: Rng>(&self, m: usize, rng: &mut R) -> Word {
        (0..m).map(|_| rng.gen_range(0..self.maps.len())).collect()
    }

    /// Index of a length-N word in the induced alphabet (lexicographic, base n).
    pub fn word_index(&self, w: &[usize]) -> usize {
        w.iter().fold(0, |acc, &a| acc * self.maps.len() + a)
    }

    /// The length-N word with a given induced index.
    pub fn index_word(&self, mut idx: usize, n_len: usize) -> Word {
        let n = self.maps.len();
        let mut w = vec![0; n_len];
        for j in (0..n_len).rev() {
            w[j] = idx % n;
            idx /= n;
        }
        w
    }
}

/// Iterate the hull map [lo,hi] ↦ conv ∪ f_a([lo,hi]) from [0,1] to its fixed point.
fn attractor_hull(maps: &[ConformalMap]) -> ((f64, f64), [(usize, usize); 2]) {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut code = [(0, 0); 2];
    for _ in 0..2000 {
        let (mut nlo, mut nhi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (a, m) in maps.iter().enumerate() {
            for (e, v) in [(0, m.eval(lo)), (1, m.eval(hi))] {
                if v < nlo {
                    nlo = v;
                    code[0] = (a, e);
                }
                if v > nhi {
                    nhi = v;
                    code[1] = (a, e);
                }
            }
        }
        let done = (nlo - lo).abs() < 1e-16 && (nhi - hi).abs() < 1e-16;
        lo = nlo;
        hi = nhi;
        if done {
            break;
        }
    }
    ((lo, hi), code)
}

/// f_w as a standalone map. The empty word is not a map here.
pub fn compose_word(ifs: &Ifs, w: &[usize]) -> ConformalMap {
    assert!(!w.is_empty(), "compose_word needs a non-empty word");
    ifs.check_word(w);
    let parts: Vec<ConformalMap> = w.iter().map(|&a| ifs.maps[a].clone()).collect();
    ConformalMap::compose(&parts)
}

/// Cylinder f_w([0,1]) as [min, max].
pub fn cylinder_interval(ifs: &Ifs, w: &[usize]) -> (f64, f64) {
    ifs.check_word(w);
    let (a, b) = (ifs.apply_word(w, 0.0), ifs.apply_word(w, 1.0));
    (a.min(b), a.max(b))
}

/// Gap between two closed intervals (0 if they meet).
pub fn interval_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.0 - a.1).max(a.0 - b.1).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distortion {
    /// Largest derivative ratio seen over sampled words and grid pairs.
    pub empirical: f64,
    /// exp(sup_a ‖(log f_a')'‖ / (1 − ρ)).
    pub analytic: f64,
}

const DISTORTION_WORDS_PER_DEPTH: usize = 4096;
const DISTORTION_GRID: usize = 256;

/// Bounded-distortion constant. Exhaustive over words while n^depth ≤ 4096,
/// seeded sampling beyond; the running max makes it monotone in depth.
pub fn distortion_constant(ifs: &Ifs, max_depth: usize) -> Distortion {
    assert!(max_depth >= 1);
    let xs: Vec<f64> = (0..=DISTORTION_GRID).map(|i| i as f64 / DISTORTION_GRID as f64).collect();
    let ratio = |w: &[usize]| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in &xs {
            let v = ifs.log_abs_deriv_word(w, x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (hi - lo).exp()
    };
    let n = ifs.len();
    let mut best = 1.0f64;
    for depth in 1..=max_depth {
        let total = (n as f64).powi(depth as i32);
        if total <= DISTORTION_WORDS_PER_DEPTH as f64 {
            for idx in 0..total as usize {
                best = best.max(ratio(&ifs.index_word(idx, depth)));
            }
        } else {
            let mut r = rng::substream(0x5EED, depth as u64);
            for _ in 0..DISTORTION_WORDS_PER_DEPTH {
                best = best.max(ratio(&ifs.random_word(depth, &mut r)));
            }
        }
    }
    let sup_ls = ifs.maps.iter().map(|m| m.sup_log_slope()).fold(0.0, f64::max);
    Distortion { empirical: best, analytic: (sup_ls / (1.0 - ifs.rho())).exp() }
}

/// d/dx(log|f_{w1}'| − log|f_{w2}'|)(x). The empty word acts as the identity.
pub fn uni_functional(ifs: &Ifs, w1: &[usize], w2: &[usize], x: f64) -> f64 {
    ifs.log_slope_word(w1, x) - ifs.log_slope_word(w2, x)
}

/// The induced IFS of all length-N words, in lexicographic order.
pub fn induce(ifs: &Ifs, n_gen: usize, cap: usize) -> Result<Ifs> {
    assert!(n_gen >= 1);
    let size = (ifs.len() as u128).checked_pow(n_gen as u32).unwrap_or(u128::MAX);
    if size > cap as u128 {
        return Err(Error::AlphabetTooLarge { size, cap });
    }
    let size = size as usize;
    let mut maps = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    for idx in 0..size {
        let w = ifs.index_word(idx, n_gen);
        maps.push(compose_word(ifs, &w));
        labels.push(w.iter().flat_map(|&a| ifs.labels[a].iter().copied()).collect());
    }
    Ifs::with_labels(maps, labels, ifs.options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn cantor_constants() {
        let c = corpus::cantor().constants();
        assert!((c.rho - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.rho_min - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.d_min - 3f64.ln()).abs() < 1e-14);
        assert!((c.d_max - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gauss24_constants() {
        let c = corpus::gauss24().constants();
        assert!((c.rho - 0.25).abs() < 1e-12);
        assert!((c.rho_min - 1.0 / 25.0).abs() < 1e-12);
        assert!((c.d_min - 4f64.ln()).abs() < 1e-10);
        assert!((c.d_max - 25f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn shared_fixed_point_rejected() {
        let r = Ifs::from_specs(&[MapSpec::affine(0.5, 0.0), MapSpec::affine(0.5, 0.0)], IfsOptions::default());
        assert!(matches!(r, Err(Error::SharedFixedPoint(_))));
    }

    #[test]
    fn reversing_needs_flag() {
        let specs = [MapSpec::gauss(2.0), MapSpec::gauss(4.0)];
        assert!(matches!(Ifs::from_specs(&specs, IfsOptions::default()), Err(Error::OrientationReversing)));
        assert!(Ifs::from_specs(&specs, IfsOptions::reversing()).is_ok());
    }

    #[test]
    fn endpoint_check_optional() {
        let strict = IfsOptions { require_interior: true, ..Default::default() };
        let specs = [MapSpec::affine(1.0 / 3.0, 0.0), MapSpec::affine(1.0 / 3.0, 2.0 / 3.0)];
        assert!(matches!(Ifs::from_specs(&specs, strict), Err(Error::EndpointInAttractor(..))));
        let inner = [MapSpec::affine(0.25, 0.125), MapSpec::affine(0.25, 0.625)];
        let ifs = Ifs::from_specs(&inner, strict).unwrap();
        assert!((ifs.hull().0 - 1.0 / 6.0).abs() < 1e-15);
        assert!((ifs.hull().1 - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn compose_examples() {
        let c = corpus::cantor();
        let f = compose_word(&c, &[0, 1]);
        for &x in &[0.0, 0.4, 1.0] {
            assert!((f.eval(x) - (x / 9.0 + 2.0 / 9.0)).abs() < 1e-15);
        }
        let g = corpus::gauss24();
        assert!((compose_word(&g, &[0]).deriv(0.0) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn cylinder_examples() {
        let c = corpus::cantor();
        assert_eq!(cylinder_interval(&c, &[1]), (2.0 / 3.0, 1.0));
        let (a, b) = cylinder_interval(&c, &[0, 1]);
        assert!((a - 2.0 / 9.0).abs() < 1e-15 && (b - 1.0 / 3.0).abs() < 1e-15);
        let (a, b) = cylinder_interval(&corpus::gauss24(), &[1]);
        assert!((a - 0.2).abs() < 1e-15 && (b - 0.25).abs() < 1e-15);
    }

    #[test]
    fn distortion_examples() {
        assert_eq!(distortion_constant(&corpus::cantor(), 4).empirical, 1.0);
        let d = distortion_constant(&corpus::gauss24(), 1);
        assert!((d.empirical - 2.25).abs() < 1e-12);
        assert!((d.analytic - (4.0f64 / 3.0).exp()).abs() < 1e-9);
        let d3 = distortion_constant(&corpus::gauss24(), 3);
        assert!(d3.empirical >= d.empirical && d3.empirical <= d3.analytic);
    }

    #[test]
    fn uni_examples() {
        let g = corpus::gauss24();
        assert!((uni_functional(&g, &[0], &[1], 0.0) + 0.5).abs() < 1e-15);
        assert!((uni_functional(&g, &[0], &[1], 1.0) + 4.0 / 15.0).abs() < 1e-15);
        let c = corpus::cantor();
        assert_eq!(uni_functional(&c, &[0, 1, 1], &[1, 0], 0.3), 0.0);
    }

    #[test]
    fn induce_examples() {
        let c2 = induce(&corpus::cantor(), 2, DEFAULT_INDUCE_CAP).unwrap();
        assert_eq!(c2.len(), 4);
        assert!(c2.maps().iter().all(|m| (m.sup_deriv() - 1.0 / 9.0).abs() < 1e-15));
        let g2 = induce(&corpus::gauss24(), 2, DEFAULT_INDUCE_CAP).unwrap();
        assert_eq!(g2.len(), 4);
        assert!(g2.rho() <= 1.0 / 16.0 + 1e-15);
        assert_eq!(g2.labels()[2], vec![1, 0]);
        assert!(matches!(
            induce(&corpus::cantor(), 13, DEFAULT_INDUCE_CAP),
            Err(Error::AlphabetTooLarge { .. })
        ));
    }

    #[test]
    fn endpoint_codes_land_on_hull() {
        let g = corpus::gauss24();
        let (lo, hi) = g.hull();
        let w0 = g.endpoint_code(0, 12);
        let w1 = g.endpoint_code(1, 12);
        assert!((g.apply_word(&w0, g.base_point()) - lo).abs() < 1e-8);
        assert!((g.apply_word(&w1, g.base_point()) - hi).abs() < 1e-8);
    }
}
