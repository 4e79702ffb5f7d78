//! Independent reference implementations and checks shared by the
//! integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ctrlf_core::embeddings::Alphabet;
use ctrlf_core::geometry::{decode_delta, encode_delta, iou, nms, smooth_l1, BBox};
use ctrlf_core::localization::{roi_pool_backward, roi_pool_bilinear, roi_pool_jvp, FeatureMap};
use ctrlf_core::neural::head::{EmbedHead, Mode, Trainable};
use ctrlf_core::neural::loss::{cosine_embedding_loss, logistic_loss, PairLabel};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_word(rng: &mut ChaCha8Rng, min_len: usize, max_len: usize) -> String {
    let chars = Alphabet::default().chars().to_vec();
    let n = rng.random_range(min_len..=max_len);
    (0..n).map(|_| chars[rng.random_range(0..chars.len())]).collect()
}

/// Every word of length one or two over the alphabet.
pub fn all_short_words() -> Vec<String> {
    let chars = Alphabet::default().chars().to_vec();
    let mut out: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    for a in &chars {
        for b in &chars {
            out.push(format!("{a}{b}"));
        }
    }
    out
}

/// DCT-II as an explicit orthonormal matrix applied to the one-hot matrix.
pub fn dctow_oracle(word: &str) -> Vec<f64> {
    let alphabet = Alphabet::default();
    let m = word.chars().count();
    let k = alphabet.len();
    let mut onehot = vec![vec![0.0; k]; m];
    for (i, c) in word.chars().enumerate() {
        onehot[i][alphabet.index(c).unwrap()] = 1.0;
    }
    let basis = |row: usize, n: usize| {
        let s = if row == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        s * (PI * (n as f64 + 0.5) * row as f64 / m as f64).cos()
    };
    let mut out = vec![0.0; 3 * k];
    for ch in 0..k {
        for row in 0..3.min(m) {
            out[ch * 3 + row] = (0..m).map(|n| basis(row, n) * onehot[n][ch]).sum();
        }
    }
    out
}

/// PHOC from real-valued occupancy intervals; a half-occupancy tie counts
/// as inside.
pub fn phoc_oracle(word: &str) -> Vec<f64> {
    let alphabet = Alphabet::default();
    let m = word.chars().count() as f64;
    let k = alphabet.len();
    let mut out = Vec::new();
    for level in 1..=5 {
        for region in 0..level {
            let (r0, r1) = (region as f64 / level as f64, (region + 1) as f64 / level as f64);
            let mut block = vec![0.0; k];
            for (i, c) in word.chars().enumerate() {
                let (c0, c1) = (i as f64 / m, (i + 1) as f64 / m);
                let overlap = (r1.min(c1) - r0.max(c0)).max(0.0);
                if overlap >= 0.5 / m - 1e-12 {
                    block[alphabet.index(c).unwrap()] = 1.0;
                }
            }
            out.extend(block);
        }
    }
    out
}

/// Precision at every relevant rank, recounted from scratch.
pub fn ap_oracle(rel: &[bool], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..rel.len() {
        if rel[k] {
            let hits = rel[..=k].iter().filter(|&&r| r).count();
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

/// Relative error with an absolute floor so gradients that are exactly zero
/// (finite differences give rounding noise) do not fail.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Each check returns the number of instances verified or a description of
/// the first failure.
pub type Check = Result<usize, String>;

pub fn check_smooth_l1(instances: usize) -> Check {
    let mut r = rng(11);
    let mut done = 0;
    while done < instances {
        let (x, t): (f64, f64) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        if ((x - t).abs() - 1.0).abs() < 1e-3 {
            continue;
        }
        let numeric = central(|x| smooth_l1(x, t).0, x);
        let e = rel_err(smooth_l1(x, t).1, numeric);
        if e >= FD_TOL {
            return Err(format!("smooth_l1({x}, {t}): relative error {e:e}"));
        }
        done += 1;
    }
    Ok(done)
}

pub fn check_logistic(instances: usize) -> Check {
    let mut r = rng(12);
    for i in 0..instances {
        let s = r.random_range(-12.0..12.0);
        let label = i % 2 == 0;
        let numeric = central(|s| logistic_loss(s, label).0, s);
        let e = rel_err(logistic_loss(s, label).1, numeric);
        if e >= FD_TOL {
            return Err(format!("logistic({s}, {label}): relative error {e:e}"));
        }
    }
    Ok(instances)
}

fn unit_vector(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

pub fn check_cosine(instances: usize) -> Check {
    let mut r = rng(13);
    let margin = 0.1;
    let mut done = 0;
    while done < instances {
        let n = r.random_range(2..12);
        let u = unit_vector(&mut r, n);
        let mut v = unit_vector(&mut r, n);
        // pull half of the pairs together so the hinge is active
        if done % 2 == 0 {
            v = v.iter().zip(&u).map(|(a, b)| 0.3 * a + b).collect();
        }
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        if (dot - margin).abs() < 1e-3 {
            continue;
        }
        let label = if done % 3 == 0 { PairLabel::Match } else { PairLabel::NonMatch };
        let pl = cosine_embedding_loss(&u, &v, label, margin).unwrap();
        for d in 0..n {
            let fu = |x: f64| {
                let mut w = u.clone();
                w[d] = x;
                cosine_embedding_loss(&w, &v, label, margin).unwrap().loss
            };
            let fv = |x: f64| {
                let mut w = v.clone();
                w[d] = x;
                cosine_embedding_loss(&u, &w, label, margin).unwrap().loss
            };
            for (a, num) in [(pl.du[d], central(fu, u[d])), (pl.dv[d], central(fv, v[d]))] {
                let e = rel_err(a, num);
                if e >= FD_TOL {
                    return Err(format!("cosine loss coordinate {d}: relative error {e:e}"));
                }
            }
        }
        done += 1;
    }
    Ok(done)
}

/// Train-mode embedding head of hidden width 16: gradients of `sum(R * y)`
/// with respect to sampled parameters and inputs.
pub fn check_embed_head(instances: usize) -> Check {
    for inst in 0..instances {
        let mut r = rng(100 + inst as u64);
        let (din, dout, batch) = (7, 5, 4);
        let mut head = EmbedHead::new(din, 16, dout, &mut r);
        for p in head.params_mut() {
            p.iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2));
        }
        let x = Array2::from_shape_simple_fn((batch, din), || r.random_range(-1.0..1.0));
        let weights = Array2::from_shape_simple_fn((batch, dout), || r.random_range(-1.0..1.0));
        let objective = |h: &EmbedHead, x: &Array2<f64>| (h.forward(x, Mode::Train).unwrap().y * &weights).sum();
        let cache = head.forward(&x, Mode::Train).unwrap();
        let (grads, dx) = head.backward(&cache, &weights);

        for _ in 0..12 {
            let t = r.random_range(0..grads.len());
            let i = r.random_range(0..grads[t].len());
            let at = |delta: f64| {
                let mut h = head.clone();
                h.params_mut()[t][i] += delta;
                objective(&h, &x)
            };
            let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            let e = rel_err(grads[t][i], numeric);
            if e >= FD_TOL {
                return Err(format!("embed head instance {inst}, tensor {t}[{i}]: relative error {e:e}"));
            }
        }
        for _ in 0..6 {
            let (b, j) = (r.random_range(0..batch), r.random_range(0..din));
            let at = |delta: f64| {
                let mut xx = x.clone();
                xx[[b, j]] += delta;
                objective(&head, &xx)
            };
            let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            let e = rel_err(dx[[b, j]], numeric);
            if e >= FD_TOL {
                return Err(format!("embed head instance {inst}, input [{b},{j}]: relative error {e:e}"));
            }
        }
    }
    Ok(instances)
}

fn near_texel_center(v: f64) -> bool {
    let f = (v - 0.5) - (v - 0.5).floor();
    f < 1e-3 || f > 1.0 - 1e-3
}

fn random_roi_case(r: &mut ChaCha8Rng) -> (FeatureMap, BBox, usize, usize) {
    let (c, h, w) = (2, r.random_range(4..9), r.random_range(4..9));
    let fm = FeatureMap::new(Array3::from_shape_simple_fn((c, h, w), || r.random_range(-1.0..1.0))).unwrap();
    let bw = r.random_range(1.0..w as f64);
    let bh = r.random_range(1.0..h as f64);
    let bbox = BBox::new(r.random_range(0.0..w as f64), r.random_range(0.0..h as f64), bw, bh);
    (fm, bbox, r.random_range(1..4), r.random_range(1..5))
}

fn sample_coords(b: &BBox, out_h: usize, out_w: usize) -> impl Iterator<Item = f64> + '_ {
    let rel = |k: usize, n: usize| (k as f64 + 0.5) / n as f64 - 0.5;
    (0..out_w).map(move |c| b.xc + b.w * rel(c, out_w)).chain((0..out_h).map(move |r| b.yc + b.h * rel(r, out_h)))
}

/// Bilinear ROI pooling: feature-map and box gradients of `sum(R * out)`.
/// Instances whose samples sit on a texel-center kink are redrawn.
pub fn check_roi_pool(instances: usize) -> Check {
    let mut r = rng(14);
    let mut done = 0;
    while done < instances {
        let (fm, bbox, oh, ow) = random_roi_case(&mut r);
        if sample_coords(&bbox, oh, ow).any(near_texel_center) {
            continue;
        }
        let weights = Array3::from_shape_simple_fn((fm.channels(), oh, ow), || r.random_range(-1.0..1.0));
        let objective = |fm: &FeatureMap, b: &BBox| (roi_pool_bilinear(fm, b, oh, ow).unwrap() * &weights).sum();
        let (gfm, gbox) = roi_pool_backward(&fm, &bbox, &weights).unwrap();
        for k in 0..4 {
            let at = |delta: f64| {
                let mut a = [bbox.xc, bbox.yc, bbox.w, bbox.h];
                a[k] += delta;
                objective(&fm, &BBox::new(a[0], a[1], a[2], a[3]))
            };
            let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            let e = rel_err(gbox[k], numeric);
            if e >= FD_TOL {
                return Err(format!("roi box coordinate {k} of {bbox:?}: relative error {e:e}"));
            }
        }
        for _ in 0..6 {
            let idx = [
                r.random_range(0..fm.channels()),
                r.random_range(0..fm.height()),
                r.random_range(0..fm.width()),
            ];
            let at = |delta: f64| {
                let mut f = fm.clone();
                f.data[idx] += delta;
                objective(&f, &bbox)
            };
            let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            let e = rel_err(gfm[idx], numeric);
            if e >= FD_TOL {
                return Err(format!("roi feature {idx:?}: relative error {e:e}"));
            }
        }
        done += 1;
    }
    Ok(done)
}

/// `<J t, R> == <t, J^T R>` for the forward- and reverse-mode ROI pooling.
pub fn check_roi_adjoint(instances: usize) -> Check {
    let mut r = rng(15);
    for _ in 0..instances {
        let (fm, bbox, oh, ow) = random_roi_case(&mut r);
        let dfm = Array3::from_shape_simple_fn(fm.data.dim(), || r.random_range(-1.0..1.0));
        let dbox = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let weights = Array3::from_shape_simple_fn((fm.channels(), oh, ow), || r.random_range(-1.0..1.0));
        let forward = (roi_pool_jvp(&fm, &bbox, &dfm, dbox, oh, ow).unwrap() * &weights).sum();
        let (gfm, gbox) = roi_pool_backward(&fm, &bbox, &weights).unwrap();
        let reverse = (&gfm * &dfm).sum() + (0..4).map(|k| gbox[k] * dbox[k]).sum::<f64>();
        if (forward - reverse).abs() > 1e-8 * forward.abs().max(1.0) {
            return Err(format!("adjoint mismatch {forward} vs {reverse}"));
        }
    }
    Ok(instances)
}

pub fn random_box(r: &mut ChaCha8Rng) -> BBox {
    BBox::new(r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(1.0..40.0), r.random_range(1.0..40.0))
}

pub fn check_delta_round_trip(instances: usize) -> Check {
    let mut r = rng(16);
    for _ in 0..instances {
        let (a, b) = (random_box(&mut r), random_box(&mut r));
        let back = decode_delta(&a, &encode_delta(&a, &b));
        let err = [back.xc - b.xc, back.yc - b.yc, back.w - b.w, back.h - b.h].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err >= 1e-9 {
            return Err(format!("round trip error {err:e} for {a:?} -> {b:?}"));
        }
    }
    Ok(instances)
}

pub fn check_nms_laws(sets: usize) -> Check {
    let mut r = rng(17);
    for s in 0..sets {
        let n = r.random_range(0..30);
        let boxes: Vec<BBox> = (0..n).map(|_| random_box(&mut r)).collect();
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let thr = r.random_range(0.0..=1.0);
        let keep = nms(&boxes, &scores, thr).unwrap();
        for (i, &a) in keep.iter().enumerate() {
            for &b in &keep[i + 1..] {
                if iou(&boxes[a], &boxes[b]) > thr {
                    return Err(format!("set {s}: kept boxes {a} and {b} overlap above {thr}"));
                }
            }
        }
        let kb: Vec<BBox> = keep.iter().map(|&i| boxes[i]).collect();
        let ks: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
        let again = nms(&kb, &ks, thr).unwrap();
        if again.len() != keep.len() {
            return Err(format!("set {s}: nms is not idempotent"));
        }
    }
    Ok(sets)
}
