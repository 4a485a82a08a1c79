//! Binary morphology with the 6-connected (face) structuring element.
//!
//! Iterating the cross `r` times is the same as a single pass with an L1 ball of
//! radius `r`, which is what every caller in this crate wants.

pub(crate) const FACE_OFFSETS: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn step(mask: &[bool], shape: [usize; 3], grow: bool, outside: bool) -> Vec<bool> {
    let [nz, ny, nx] = shape;
    let mut out = mask.to_vec();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if mask[i] == grow {
                    continue;
                }
                let hit = FACE_OFFSETS.iter().any(|o| {
                    let (zz, yy, xx) = (z as isize + o[0], y as isize + o[1], x as isize + o[2]);
                    if zz < 0
                        || yy < 0
                        || xx < 0
                        || zz >= nz as isize
                        || yy >= ny as isize
                        || xx >= nx as isize
                    {
                        outside == grow
                    } else {
                        mask[(zz as usize * ny + yy as usize) * nx + xx as usize] == grow
                    }
                });
                if hit {
                    out[i] = grow;
                }
            }
        }
    }
    out
}

/// Dilation; nothing outside the grid is foreground.
pub fn dilate(mask: &[bool], shape: [usize; 3], iterations: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    for _ in 0..iterations {
        m = step(&m, shape, true, false);
    }
    m
}

/// Erosion; voxels outside the grid count as foreground, so objects touching
/// the border are not eaten from outside.
pub fn erode(mask: &[bool], shape: [usize; 3], iterations: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    for _ in 0..iterations {
        m = step(&m, shape, false, true);
    }
    m
}

pub fn close(mask: &[bool], shape: [usize; 3], iterations: usize) -> Vec<bool> {
    erode(&dilate(mask, shape, iterations), shape, iterations)
}

pub fn open(mask: &[bool], shape: [usize; 3], iterations: usize) -> Vec<bool> {
    dilate(&erode(mask, shape, iterations), shape, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l1_ball_oracle(mask: &[bool], shape: [usize; 3], r: usize) -> Vec<bool> {
        let [nz, ny, nx] = shape;
        let pts: Vec<[usize; 3]> = (0..mask.len())
            .filter(|&i| mask[i])
            .map(|i| [i / (ny * nx), (i / nx) % ny, i % nx])
            .collect();
        (0..nz * ny * nx)
            .map(|i| {
                let c = [i / (ny * nx), (i / nx) % ny, i % nx];
                pts.iter()
                    .any(|p| (0..3).map(|a| p[a].abs_diff(c[a])).sum::<usize>() <= r)
            })
            .collect()
    }

    #[test]
    fn iterated_cross_equals_l1_ball() {
        let shape = [7, 7, 7];
        let mut mask = vec![false; 343];
        mask[3 * 49 + 3 * 7 + 3] = true;
        mask[1 * 49 + 5 * 7 + 2] = true;
        for r in 0..4 {
            assert_eq!(dilate(&mask, shape, r), l1_ball_oracle(&mask, shape, r));
        }
    }

    #[test]
    fn opening_removes_specks_and_keeps_blocks() {
        let shape = [6, 6, 6];
        let mut mask = vec![false; 216];
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    mask[(z * 6 + y) * 6 + x] = true;
                }
            }
        }
        mask[(5 * 6 + 5) * 6 + 5] = false;
        mask[(4 * 6 + 4) * 6 + 4] = true;
        let opened = open(&mask, shape, 1);
        assert!(!opened[(4 * 6 + 4) * 6 + 4]);
        assert!(opened[(1 * 6 + 1) * 6 + 1]);
    }
}
