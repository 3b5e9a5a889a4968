//! Inter-channel Pearson correlation.

use crate::features::FeatureCube;
use crate::real::Real;
use ndarray::Array2;

/// Pearson correlation matrix between all channel pairs.
///
/// With `valid_only` set, statistics run over valid pixels; otherwise over
/// every pixel. Channels with zero variance have no defined correlation:
/// their whole row and column (diagonal included) is NaN.
pub fn correlation_matrix<T: Real>(cube: &FeatureCube<T>, valid_only: bool) -> Array2<T> {
    let c = cube.num_channels();
    let (h, w) = (cube.height(), cube.width());
    let selected: Vec<(usize, usize)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .filter(|&(i, j)| !valid_only || cube.valid()[(i, j)])
        .collect();
    let n = selected.len();
    let mut out = Array2::from_elem((c, c), T::nan());
    if n < 2 {
        return out;
    }
    let n_t = T::from_usize_lossy(n);

    let mut means = vec![T::zero(); c];
    for (ch, mean) in means.iter_mut().enumerate() {
        let plane = cube.channel_at(ch);
        *mean = selected.iter().map(|&(i, j)| plane[(i, j)]).sum::<T>() / n_t;
    }
    // cross[a][b] = sum of centred products; diagonal = sum of squares
    let mut cross = Array2::from_elem((c, c), T::zero());
    for a in 0..c {
        let pa = cube.channel_at(a);
        for b in a..c {
            let pb = cube.channel_at(b);
            let mut acc = T::zero();
            for &(i, j) in &selected {
                acc += (pa[(i, j)] - means[a]) * (pb[(i, j)] - means[b]);
            }
            cross[(a, b)] = acc;
            cross[(b, a)] = acc;
        }
    }
    let defined: Vec<bool> = (0..c).map(|a| cross[(a, a)] > T::zero()).collect();
    for a in 0..c {
        for b in 0..c {
            if defined[a] && defined[b] {
                out[(a, b)] = cross[(a, b)] / (cross[(a, a)] * cross[(b, b)]).sqrt();
            }
        }
    }
    out
}
