// temp debug: dump contour stats for the Gaussian stream harness
use diar_core::changepoint::*;
use diar_core::embed::sliding_embeddings;
use diar_core::features::FeatureMatrix;
use diar_core::score::CosineScorer;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let dim = 13;
    let offset = 5.0 / (dim as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut rows = Vec::new();
    for (len, off) in [(500usize, 0.0), (500, offset)] {
        for _ in 0..len {
            rows.push((0..dim).map(|_| off + normal.sample(&mut rng)).collect::<Vec<f64>>());
        }
    }
    let feats = FeatureMatrix::from_rows(rows, 10).unwrap();
    let params = ChangePointParams::language_defaults();
    let seq = sliding_embeddings(&feats, params.window_len, 1, None).unwrap();
    let contour = divergence_contour(&seq, &CosineScorer).unwrap();
    let smoothed = smooth_contour(&contour, params.window_len, params.delta).unwrap();
    let min = smoothed.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = smoothed.values.iter().map(|v| v - min).collect();
    let amax = shifted.iter().enumerate().max_by(|a,b| a.1.total_cmp(b.1)).unwrap();
    println!("contour len {}", contour.values.len());
    println!("raw min {:.6e} max {:.6e}", contour.values.iter().cloned().fold(f64::INFINITY, f64::min), contour.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    println!("smoothed min {:.6e} max {:.6e}", min, smoothed.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    println!("shifted argmax {} val {:.6e}", amax.0, amax.1);
    // trailing mean at argmax with trail 2*w_l
    let trail = 2 * params.smoothing_len();
    let lo = amax.0.saturating_sub(trail);
    let tm = shifted[lo..amax.0].iter().sum::<f64>() / (amax.0 - lo) as f64;
    println!("trail mean at peak {:.6e}  alpha*tm {:.6e}  peak {:.6e}", tm, 3.2*tm, amax.1);
    // percentiles of shifted
    let mut s = shifted.clone(); s.sort_by(f64::total_cmp);
    for q in [0.05, 0.25, 0.5, 0.75, 0.95] {
        println!("q{:.2} {:.6e}", q, s[(q * s.len() as f64) as usize]);
    }
}
