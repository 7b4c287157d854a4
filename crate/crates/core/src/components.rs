//! 26-connected component labelling of binary volumes.

use std::collections::VecDeque;

use crate::tensor::Triple;

/// One connected component: voxel count and centroid `(x, y, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub label: u32,
    pub size: usize,
    pub centroid: [f64; 3],
}

/// Offsets of the 26-neighbourhood as `(dz, dy, dx)`.
pub fn neighbours26() -> impl Iterator<Item = [isize; 3]> {
    (-1..=1isize).flat_map(|dz| (-1..=1isize).flat_map(move |dy| (-1..=1isize).map(move |dx| [dz, dy, dx]))).filter(|o| *o != [0, 0, 0])
}

/// Label the foreground (`true`) voxels of a `[d, h, w]` volume. Labels start
/// at 1 in scan order; background is 0.
pub fn label_components(mask: &[bool], dims: Triple) -> (Vec<u32>, Vec<Component>) {
    let [d, h, w] = dims;
    assert_eq!(mask.len(), d * h * w, "mask length does not match dims");
    let mut labels = vec![0u32; mask.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    let offsets: Vec<_> = neighbours26().collect();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = comps.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let (mut size, mut sum) = (0usize, [0f64; 3]);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = (i / (h * w), i / w % h, i % w);
            size += 1;
            sum[0] += x as f64;
            sum[1] += y as f64;
            sum[2] += z as f64;
            for [dz, dy, dx] in &offsets {
                let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                if nz < 0 || ny < 0 || nx < 0 || nz >= d as isize || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = (nz as usize * h + ny as usize) * w + nx as usize;
                if mask[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        comps.push(Component { label, size, centroid: sum.map(|s| s / size as f64) });
    }
    (labels, comps)
}
