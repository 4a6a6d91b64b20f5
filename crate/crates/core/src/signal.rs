//! Zero-phase Gaussian filtering of sampled signals.

use crate::scalar::Real;

/// Normalized Gaussian taps of length `2 * radius + 1`.
pub fn gaussian_kernel<T: Real>(sigma: T, radius: usize) -> Vec<T> {
    if !(sigma > T::zero()) {
        let mut k = vec![T::zero(); 2 * radius + 1];
        k[radius] = T::one();
        return k;
    }
    let two = T::one() + T::one();
    let taps: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let d = T::of_usize(i) - T::of_usize(radius);
            (-(d * d) / (two * sigma * sigma)).exp()
        })
        .collect();
    let total: T = taps.iter().copied().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Symmetric convolution with edge samples replicated past both ends, so a
/// constant signal is returned unchanged.
pub fn gaussian_filter<T: Real>(signal: &[T], sigma: T, radius: usize) -> Vec<T> {
    if signal.is_empty() {
        return Vec::new();
    }
    let kernel = gaussian_kernel(sigma, radius);
    let last = signal.len() as isize - 1;
    (0..signal.len())
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let j = (i as isize + k as isize - radius as isize).clamp(0, last);
                    *w * signal[j as usize]
                })
                .sum()
        })
        .collect()
}

/// Gaussian filter with point-symmetric extension past both ends
/// (`x[-k] = 2 x[0] - x[k]`). Linear trends pass through unchanged and the
/// first and last samples are kept exactly.
pub fn gaussian_filter_pinned<T: Real>(signal: &[T], sigma: T, radius: usize) -> Vec<T> {
    let n = signal.len();
    if n < 2 {
        return signal.to_vec();
    }
    let kernel = gaussian_kernel(sigma, radius);
    let last = n as isize - 1;
    let two = T::one() + T::one();
    let at = |j: isize| -> T {
        if j < 0 {
            two * signal[0] - signal[(-j).min(last) as usize]
        } else if j > last {
            two * signal[last as usize] - signal[(2 * last - j).max(0) as usize]
        } else {
            signal[j as usize]
        }
    };
    let mut out: Vec<T> = (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| *w * at(i as isize + k as isize - radius as isize))
                .sum()
        })
        .collect();
    out[0] = signal[0];
    out[n - 1] = signal[n - 1];
    out
}

/// Standard deviation in samples of the Gaussian whose magnitude response
/// falls to `1/sqrt(2)` at `cutoff_hz`.
pub fn sigma_for_cutoff<T: Real>(cutoff_hz: T, sample_rate: T) -> T {
    let ln2 = T::LN_2();
    ln2.sqrt() / (T::of(2.0) * T::PI() * cutoff_hz) * sample_rate
}
