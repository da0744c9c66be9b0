//! Dataset arguments and layered configuration.
//!
//! A dataset argument is either a file (IDX images or an `FLT1` tensor) or a
//! generator spec:
//!
//! | spec | data |
//! |------|------|
//! | `moons:N[:NOISE]` | two-moons points, `N×2` |
//! | `gaussian:D:VAR:N` | `N(0, VAR·I)`, `N×D` |
//! | `constant:VALUE:SHAPE:N` | every pixel `VALUE` (raw scale) |
//! | `random:SHAPE:N` | i.i.d. uniform raw pixels |
//!
//! `SHAPE` is `HxWxC` or a flat dimension.

use std::path::Path;

use flowlab::config::KeyValues;
use flowlab::data::{
    gen_constant, gen_diag_gaussian, gen_two_moons, gen_uniform_random, load_dataset, DataKind, ImageDataset,
};
use flowlab::flow::ExampleShape;
use flowlab::tensor::{RngState, Tensor};
use flowlab::{Error, Result};

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn field<T: std::str::FromStr>(spec: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| usage(format!("dataset spec {spec:?}: bad {what} {value:?}")))
}

fn is_generator(spec: &str) -> bool {
    ["moons:", "gaussian:", "constant:", "random:"]
        .iter()
        .any(|p| spec.starts_with(p))
}

/// Resolve a dataset argument. Generators draw from `rng`; files ignore it.
pub fn load_data(spec: &str, rng: &mut RngState) -> Result<ImageDataset> {
    if !is_generator(spec) || Path::new(spec).exists() {
        return load_dataset(spec);
    }
    let parts: Vec<&str> = spec.split(':').collect();
    let bad_arity = || usage(format!("dataset spec {spec:?}: wrong number of fields"));
    match parts[0] {
        "moons" => {
            let (n, noise) = match parts[1..] {
                [n] => (field(spec, n, "count")?, flowlab::data::DEFAULT_MOON_NOISE),
                [n, s] => (field(spec, n, "count")?, field(spec, s, "noise")?),
                _ => return Err(bad_arity()),
            };
            Ok(ImageDataset::new(
                gen_two_moons(n, noise, rng)?.points,
                DataKind::Continuous,
            ))
        }
        "gaussian" => {
            let [d, var, n] = parts[1..] else {
                return Err(bad_arity());
            };
            let d: usize = field(spec, d, "dimension")?;
            let var: f64 = field(spec, var, "variance")?;
            let n: usize = field(spec, n, "count")?;
            Ok(ImageDataset::new(
                gen_diag_gaussian(n, &vec![0.0; d], &vec![var; d], rng)?,
                DataKind::Continuous,
            ))
        }
        "constant" => {
            let [value, shape, n] = parts[1..] else {
                return Err(bad_arity());
            };
            gen_constant(
                field(spec, value, "value")?,
                field(spec, shape, "shape")?,
                field(spec, n, "count")?,
            )
        }
        "random" => {
            let [shape, n] = parts[1..] else {
                return Err(bad_arity());
            };
            let shape: ExampleShape = field(spec, shape, "shape")?;
            Ok(gen_uniform_random(shape, field(spec, n, "count")?, rng))
        }
        _ => unreachable!("checked by is_generator"),
    }
}

/// Raw pixels become `x/256` without noise; other data is returned as is.
pub fn scaled_images(ds: &ImageDataset) -> Tensor {
    match ds.kind {
        DataKind::RawPixels => ds.images.map(|v| v / 256.0),
        _ => ds.images.clone(),
    }
}

/// Defaults, then the config file, then flags; unknown keys are usage errors.
pub fn layered_config(
    defaults: KeyValues,
    file: Option<&Path>,
    flags: &KeyValues,
    allowed: &[&str],
) -> Result<KeyValues> {
    let mut kv = defaults;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        kv.merge(&KeyValues::parse(&text)?);
    }
    kv.merge(flags);
    kv.reject_unknown(allowed)?;
    Ok(kv)
}
