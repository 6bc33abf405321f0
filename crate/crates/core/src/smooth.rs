//! Separable Gaussian filtering with border renormalization.

/// Unnormalized Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Weighted local mean: each output pixel is the kernel-weighted average of
/// the in-bounds neighbors, so borders are not darkened.
pub fn blur(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = kernel.len() / 2;
    let pass = |src: &[f64], len: usize, stride: usize, count: usize, step: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            let base = line * step;
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1);
                let mut acc = 0.0;
                let mut norm = 0.0;
                for j in lo..=hi {
                    let k = kernel[j + radius - i];
                    acc += k * src[base + j * stride];
                    norm += k;
                }
                out[base + i * stride] = acc / norm;
            }
        }
        out
    };
    let horizontal = pass(data, width, 1, height, width);
    pass(&horizontal, height, width, width, 1)
}

/// Gaussian blur truncated at three standard deviations. `sigma = 0` is the identity.
pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    blur(data, width, height, &gaussian_kernel(sigma, radius))
}
