//! Standard test systems.

use crate::ifs::{Ifs, IfsOptions, MapSpec};
use crate::measure::SelfConformalMeasure;

/// {x/3, x/3 + 2/3}
pub fn cantor() -> Ifs {
    Ifs::from_specs(&[MapSpec::affine(1.0 / 3.0, 0.0), MapSpec::affine(1.0 / 3.0, 2.0 / 3.0)], IfsOptions::default())
        .expect("cantor")
}

/// {1/(2+x), 1/(4+x)}, orientation-reversing.
pub fn gauss24() -> Ifs {
    Ifs::from_specs(&[MapSpec::gauss(2.0), MapSpec::gauss(4.0)], IfsOptions::reversing()).expect("gauss24")
}

/// {x/2, x/2 + 1/2}: Lebesgue measure with uniform weights.
pub fn dyadic() -> Ifs {
    Ifs::from_specs(&[MapSpec::affine(0.5, 0.0), MapSpec::affine(0.5, 0.5)], IfsOptions::default()).expect("dyadic")
}

/// Cantor-type affine system whose attractor [1/6, 5/6] stays off the endpoints.
pub fn inner_cantor() -> Ifs {
    Ifs::from_specs(&[MapSpec::affine(0.25, 0.125), MapSpec::affine(0.25, 0.625)], IfsOptions::default())
        .expect("inner cantor")
}

/// Orientation-preserving non-affine pair: x ↦ x/(x+3) and its mirror-shifted
/// partner x ↦ 1/2 + x/(2x+4).
pub fn moebius_pair() -> Ifs {
    Ifs::from_specs(
        &[
            MapSpec::Moebius { a: 1.0, b: 0.0, c: 1.0, d: 3.0 },
            MapSpec::Moebius { a: 2.0, b: 2.0, c: 2.0, d: 4.0 },
        ],
        IfsOptions::default(),
    )
    .expect("moebius pair")
}

/// Three affine maps with unequal ratios.
pub fn affine_three() -> Ifs {
    Ifs::from_specs(
        &[MapSpec::affine(0.2, 0.0), MapSpec::affine(0.3, 0.35), MapSpec::affine(0.25, 0.75)],
        IfsOptions::default(),
    )
    .expect("affine three")
}

pub fn uniform(ifs: Ifs) -> SelfConformalMeasure {
    let n = ifs.len();
    SelfConformalMeasure::new(ifs, vec![1.0 / n as f64; n]).expect("uniform weights")
}
