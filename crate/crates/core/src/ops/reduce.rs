//! Blocked reductions: 16 independent f32 lanes over blocks of 512 elements,
//! with block totals carried in f64.

const LANES: usize = 16;
const BLOCK: usize = 512;

#[inline]
fn lanes_total(acc: &[f32; LANES]) -> f64 {
    acc.iter().map(|&v| v as f64).sum()
}

pub(crate) fn sum(xs: &[f32]) -> f64 {
    let mut total = 0.0f64;
    for block in xs.chunks(BLOCK) {
        let mut acc = [0.0f32; LANES];
        let mut it = block.chunks_exact(LANES);
        for ch in &mut it {
            for (a, &v) in acc.iter_mut().zip(ch) {
                *a += v;
            }
        }
        total += lanes_total(&acc) + it.remainder().iter().map(|&v| v as f64).sum::<f64>();
    }
    total
}

/// `sum (x - mean)^2`.
pub(crate) fn sum_sq_dev(xs: &[f32], mean: f32) -> f64 {
    let mut total = 0.0f64;
    for block in xs.chunks(BLOCK) {
        let mut acc = [0.0f32; LANES];
        let mut it = block.chunks_exact(LANES);
        for ch in &mut it {
            for (a, &v) in acc.iter_mut().zip(ch) {
                let d = v - mean;
                *a += d * d;
            }
        }
        let tail: f64 = it
            .remainder()
            .iter()
            .map(|&v| ((v - mean) * (v - mean)) as f64)
            .sum();
        total += lanes_total(&acc) + tail;
    }
    total
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let b = &b[..a.len()];
    let mut total = 0.0f64;
    for (ba, bb) in a.chunks(BLOCK).zip(b.chunks(BLOCK)) {
        let mut acc = [0.0f32; LANES];
        let mut ia = ba.chunks_exact(LANES);
        let mut ib = bb.chunks_exact(LANES);
        for (ca, cb) in (&mut ia).zip(&mut ib) {
            for ((s, &x), &y) in acc.iter_mut().zip(ca).zip(cb) {
                *s += x * y;
            }
        }
        let tail: f64 = ia
            .remainder()
            .iter()
            .zip(ib.remainder())
            .map(|(&x, &y)| (x * y) as f64)
            .sum();
        total += lanes_total(&acc) + tail;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn matches_naive_sums() {
        for len in [0usize, 1, 15, 16, 17, 511, 512, 513, 2000] {
            let xs: Vec<f32> = (0..len).map(|i| (i as f32 * 0.37).sin()).collect();
            let naive: f64 = xs.iter().map(|&v| v as f64).sum();
            assert!((sum(&xs) - naive).abs() < 1e-4, "len {len}");
            let m = 0.1f32;
            let naive_sq: f64 = xs.iter().map(|&v| ((v - m) as f64).powi(2)).sum();
            assert!((sum_sq_dev(&xs, m) - naive_sq).abs() < 1e-4);
            let naive_dot: f64 = xs.iter().map(|&v| (v * v) as f64).sum();
            assert!((dot(&xs, &xs) - naive_dot).abs() < 1e-4);
        }
    }
}
