//! Conformal maps, iterated function systems, words and cylinders, bounded
//! distortion, the UNI functional and the induced-IFS quadruple search.

mod map;
mod system;
mod uni;

pub use map::{golden_min, ConformalMap, Jet, MapSpec, VALIDATION_GRID};
pub use system::{
    compose_word, cylinder_interval, distortion_constant, induce, interval_distance, uni_functional, Constants,
    Distortion, Ifs, IfsOptions, Word, DEFAULT_INDUCE_CAP,
};
pub use uni::{
    certify_quadruple, find_uni_quadruple, uni_bounds, uni_grid, uni_max_shallow, SearchCase, UniBudget, UniQuadruple, UNI_GRID,
    UNI_ZERO_TOL,
};

/// Build and validate a single map.
pub fn build_map(spec: MapSpec) -> crate::error::Result<ConformalMap> {
    ConformalMap::from_spec(spec)
}

/// Validate a family of maps as an IFS.
pub fn validate_ifs(maps: Vec<ConformalMap>, options: IfsOptions) -> crate::error::Result<Ifs> {
    Ifs::new(maps, options)
}
