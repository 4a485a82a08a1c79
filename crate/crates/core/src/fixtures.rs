//! Seeded synthetic inputs: a Voronoi-tessellated spheroid standing in for a
//! segmented cell aggregate, and a stack of textured ellipsoidal nuclei for
//! building prototype databases.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::volume::{IntensityVolume, LabelVolume, Volume, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpheroidSpec {
    pub shape: [usize; 3],
    pub n_cells: usize,
    /// Spheroid semi-axes as a fraction of the half extents. Values of √3 or
    /// more fill the whole box, giving a densely packed tissue patch.
    pub radius_fraction: f64,
    pub seed: u64,
}

impl Default for SpheroidSpec {
    fn default() -> Self {
        Self {
            shape: [32, 32, 32],
            n_cells: 25,
            radius_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Ellipsoidal spheroid of `n_cells` Voronoi cells labelled `1..=n_cells`,
/// medium outside. Seeds are spread by rejection with a minimum spacing and
/// relaxed by two Lloyd iterations.
pub fn voronoi_spheroid(spec: &SpheroidSpec) -> Result<LabelVolume> {
    if spec.n_cells == 0 {
        return Err(Error::arg("n_cells must be >= 1"));
    }
    if !(spec.radius_fraction > 0.0 && spec.radius_fraction <= 2.0) {
        return Err(Error::arg("radius_fraction must be in (0, 2]"));
    }
    let geom = VolumeGeometry::isotropic(spec.shape)?;
    let center = spec.shape.map(|n| (n as f64 - 1.0) / 2.0);
    let semi = spec
        .shape
        .map(|n| (n as f64 / 2.0 * spec.radius_fraction).max(0.5));
    let inside = |p: [f64; 3]| {
        (0..3)
            .map(|a| ((p[a] - center[a]) / semi[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    };

    let sites: Vec<usize> = (0..geom.len())
        .filter(|&i| {
            let c = geom.coords(i);
            inside(c.map(|x| x as f64))
        })
        .collect();
    if sites.len() < spec.n_cells {
        return Err(Error::arg(format!(
            "spheroid holds {} voxels, fewer than {} cells",
            sites.len(),
            spec.n_cells
        )));
    }

    let mut rng = rng_from_seed(spec.seed);
    let mut min_dist = 0.8 * (sites.len() as f64 / spec.n_cells as f64).cbrt();
    let mut seeds: Vec<[f64; 3]> = Vec::with_capacity(spec.n_cells);
    let mut tries = 0;
    while seeds.len() < spec.n_cells {
        let c = geom
            .coords(sites[rng.random_range(0..sites.len())])
            .map(|x| x as f64);
        let far = seeds
            .iter()
            .all(|s| (0..3).map(|a| (s[a] - c[a]).powi(2)).sum::<f64>() >= min_dist * min_dist);
        if far {
            seeds.push(c);
        }
        tries += 1;
        if tries % 1000 == 0 {
            min_dist *= 0.9;
        }
    }

    let assign = |seeds: &[[f64; 3]]| -> Vec<u32> {
        let mut out = vec![0u32; geom.len()];
        for &i in &sites {
            let c = geom.coords(i).map(|x| x as f64);
            let mut best = (f64::INFINITY, 0usize);
            for (k, s) in seeds.iter().enumerate() {
                let d: f64 = (0..3).map(|a| (s[a] - c[a]).powi(2)).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            out[i] = best.1 as u32 + 1;
        }
        out
    };

    for _ in 0..2 {
        let labels = assign(&seeds);
        let mut sum = vec![[0.0f64; 3]; spec.n_cells];
        let mut count = vec![0usize; spec.n_cells];
        for &i in &sites {
            let k = labels[i] as usize - 1;
            let c = geom.coords(i);
            for a in 0..3 {
                sum[k][a] += c[a] as f64;
            }
            count[k] += 1;
        }
        for k in 0..spec.n_cells {
            if count[k] > 0 {
                seeds[k] = sum[k].map(|s| s / count[k] as f64);
            }
        }
    }
    let data = assign(&seeds);
    let mut v = Volume::from_vec(geom, data)?;
    // a Lloyd step can in principle empty a cell; keep labels contiguous
    let present = v.labels();
    if present.len() < spec.n_cells {
        let mut map = vec![0u32; spec.n_cells + 1];
        for (k, &l) in present.iter().enumerate() {
            map[l as usize] = k as u32 + 1;
        }
        v = v.map(|l| map[l as usize]);
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NucleiSpec {
    pub n_nuclei: usize,
    /// Range of ellipsoid semi-axes in voxels.
    pub min_semi_axis: f64,
    pub max_semi_axis: f64,
    pub seed: u64,
}

impl Default for NucleiSpec {
    fn default() -> Self {
        Self {
            n_nuclei: 10,
            min_semi_axis: 3.0,
            max_semi_axis: 6.0,
            seed: 0,
        }
    }
}

/// A row of randomly oriented, textured ellipsoidal nuclei separated along x,
/// returned as (intensity, labels). Intensities lie in about [0.3, 1].
pub fn ellipsoid_nuclei(spec: &NucleiSpec) -> Result<(IntensityVolume, LabelVolume)> {
    if spec.n_nuclei == 0 {
        return Err(Error::arg("n_nuclei must be >= 1"));
    }
    if !(spec.min_semi_axis >= 1.0 && spec.max_semi_axis >= spec.min_semi_axis) {
        return Err(Error::arg("semi-axis range must satisfy 1 <= min <= max"));
    }
    let cell = (2.0 * spec.max_semi_axis).ceil() as usize + 3;
    let shape = [cell, cell, cell * spec.n_nuclei];
    let geom = VolumeGeometry::isotropic(shape)?;
    let mut labels = vec![0u32; geom.len()];
    let mut intensity = vec![0.0f32; geom.len()];
    let mut rng = rng_from_seed(spec.seed);
    let texture = Normal::new(0.0, 0.08).expect("valid normal");
    for k in 0..spec.n_nuclei {
        let semi: [f64; 3] =
            [0, 1, 2].map(|_| rng.random_range(spec.min_semi_axis..=spec.max_semi_axis));
        let rot = random_rotation(&mut rng);
        let center = [
            (cell as f64 - 1.0) / 2.0,
            (cell as f64 - 1.0) / 2.0,
            k as f64 * cell as f64 + (cell as f64 - 1.0) / 2.0,
        ];
        let brightness = rng.random_range(0.6..0.9);
        for z in 0..cell {
            for y in 0..cell {
                for x in k * cell..(k + 1) * cell {
                    let d = [
                        z as f64 - center[0],
                        y as f64 - center[1],
                        x as f64 - center[2],
                    ];
                    // body coordinates = Rᵀ d
                    let b: [f64; 3] = [0, 1, 2].map(|r| (0..3).map(|c| rot[c][r] * d[c]).sum());
                    let q: f64 = (0..3).map(|a| (b[a] / semi[a]).powi(2)).sum();
                    if q <= 1.0 {
                        let i = geom.index(z, y, x);
                        labels[i] = k as u32 + 1;
                        let value = brightness * (1.0 - 0.3 * q) + texture.sample(&mut rng);
                        intensity[i] = value.clamp(0.05, 1.0) as f32;
                    }
                }
            }
        }
    }
    Ok((
        Volume::from_vec(geom, intensity)?,
        Volume::from_vec(geom, labels)?,
    ))
}

/// Uniform random rotation from a normalized quaternion, row-major.
pub(crate) fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let n = Normal::new(0.0, 1.0).expect("valid normal");
    let mut q = [0.0f64; 4];
    loop {
        for c in q.iter_mut() {
            *c = n.sample(rng);
        }
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-9 {
            q.iter_mut().for_each(|c| *c /= norm);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}
