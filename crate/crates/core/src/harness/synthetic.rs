//! Synthetic domain-shift benchmark.
//!
//! Class weights are orthonormal random prototypes `p_j`. Each class also
//! gets an offset direction `q_j` orthogonal to every prototype. A domain
//! with shift `s` draws class-`j` embeddings around
//! `cos(sπ/2)·p_j + sin(sπ/2)·q_j` with isotropic Gaussian noise, then
//! normalizes them. `s = 0` gives text-aligned audio, `s = 1` puts every
//! class in a subspace the class weights cannot see.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::store::{ClassWeights, EmbeddingDataset, Record, Split};

/// Records per class in each split for `shots_available` train records
/// (70/10/20).
pub fn split_sizes(shots_available: usize) -> [usize; 3] {
    let val = ((shots_available as f64) / 7.0).round().max(1.0) as usize;
    let test = ((2 * shots_available) as f64 / 7.0).round().max(1.0) as usize;
    [shots_available, val, test]
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Removes the components along each (unit) vector in `basis`.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    if n < 1e-9 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

struct Geometry {
    prototypes: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
}

fn geometry(n_classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Geometry {
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while prototypes.len() < n_classes {
        let mut v = gaussian(rng, dim);
        project_out(&mut v, &prototypes);
        if let Some(v) = unit(v) {
            prototypes.push(v);
        }
    }
    let mut offsets: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for j in 0..n_classes {
        if dim == n_classes {
            // no room outside the prototypes: borrow the next class's prototype
            offsets.push(prototypes[(j + 1) % n_classes].clone());
            continue;
        }
        let q = loop {
            let mut v = gaussian(rng, dim);
            project_out(&mut v, &prototypes);
            // keep offsets mutually orthogonal while the complement allows it
            if offsets.len() < dim - n_classes {
                project_out(&mut v, &offsets);
            }
            if let Some(v) = unit(v) {
                break v;
            }
        };
        offsets.push(q);
    }
    Geometry {
        prototypes,
        offsets,
    }
}

fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("class_{j}")).collect()
}

/// Several domains over one shared label space and class-weight matrix,
/// one per entry of `shifts`.
pub fn make_shift_domains(
    n_classes: usize,
    dim: usize,
    shots_available: usize,
    shifts: &[f64],
    noise: f64,
    seed: u64,
) -> Result<(Vec<EmbeddingDataset>, ClassWeights)> {
    if n_classes == 0 || dim < n_classes {
        return Err(Error::BadDimension {
            dim,
            num_classes: n_classes,
        });
    }
    if shots_available == 0 {
        return Err(Error::InvalidParameter("shots_available must be positive".into()));
    }
    for &s in shifts {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidParameter(format!("shift must lie in [0, 1], got {s}")));
        }
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise must be non-negative, got {noise}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geo = geometry(n_classes, dim, &mut rng);
    let names = class_names(n_classes);
    let weights = ClassWeights::new(
        dim,
        names.clone(),
        geo.prototypes
            .iter()
            .map(|p| p.iter().map(|&x| x as f32).collect())
            .collect(),
        "[class]",
    )?;

    let sizes = split_sizes(shots_available);
    let mut domains = Vec::with_capacity(shifts.len());
    for (d, &shift) in shifts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(d as u64 + 1);
        let theta = shift * FRAC_PI_2;
        let (c, s) = (theta.cos(), theta.sin());
        let mut records = Vec::with_capacity(n_classes * sizes.iter().sum::<usize>());
        for (split, &count) in Split::ALL.iter().zip(&sizes) {
            for j in 0..n_classes {
                for i in 0..count {
                    let v: Vec<f64> = geo.prototypes[j]
                        .iter()
                        .zip(&geo.offsets[j])
                        .map(|(p, q)| c * p + s * q + noise * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let n = norm(&v);
                    records.push(Record {
                        id: format!("{split}_c{j}_{i}"),
                        split: *split,
                        label: j,
                        vector: v.iter().map(|x| (x / n) as f32).collect(),
                    });
                }
            }
        }
        domains.push(EmbeddingDataset::new(dim, names.clone(), records)?);
    }
    Ok((domains, weights))
}

pub fn make_shift_benchmark(
    n_classes: usize,
    dim: usize,
    shots_available: usize,
    shift: f64,
    noise: f64,
    seed: u64,
) -> Result<(EmbeddingDataset, ClassWeights)> {
    let (mut domains, weights) =
        make_shift_domains(n_classes, dim, shots_available, &[shift], noise, seed)?;
    Ok((domains.remove(0), weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ratio() {
        assert_eq!(split_sizes(70), [70, 10, 20]);
        assert_eq!(split_sizes(1), [1, 1, 1]);
    }

    #[test]
    fn geometry_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = geometry(8, 64, &mut rng);
        for (i, p) in g.prototypes.iter().enumerate() {
            assert!((norm(p) - 1.0).abs() < 1e-12);
            for q in &g.prototypes[..i] {
                assert!(dot(p, q).abs() < 1e-12);
            }
            for q in &g.offsets {
                assert!(dot(p, q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_narrow() {
        assert!(matches!(
            make_shift_benchmark(8, 4, 10, 0.5, 0.1, 0),
            Err(Error::BadDimension { .. })
        ));
        // square case still works
        assert!(make_shift_benchmark(4, 4, 10, 1.0, 0.1, 0).is_ok());
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, wa) = make_shift_benchmark(5, 16, 12, 0.7, 0.1, 9).unwrap();
        let (b, wb) = make_shift_benchmark(5, 16, 12, 0.7, 0.1, 9).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(wa.to_bytes().unwrap(), wb.to_bytes().unwrap());
        let (c, _) = make_shift_benchmark(5, 16, 12, 0.7, 0.1, 10).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn domains_share_weights_and_names() {
        let (ds, _) = make_shift_domains(3, 12, 7, &[0.5, 1.0], 0.1, 1).unwrap();
        assert_eq!(ds[0].class_names(), ds[1].class_names());
        assert_ne!(ds[0].records()[0].vector, ds[1].records()[0].vector);
        assert_eq!(ds[0].split_counts(), [21, 3, 6]);
    }
}
