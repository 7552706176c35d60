//! The three adversarial objectives, as pure score-space functions.
//!
//! Loss arithmetic runs in f64 regardless of the training float type so the
//! closed-form unit constants hold to full precision.

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-7;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Original GAN objective on sigmoid scores in [0, 1].
///
/// `d_loss = -mean(log d_real) - mean(log(1 - d_fake))`, and the generator
/// uses the non-saturating form `g_loss = -mean(log d_fake)`.
pub fn loss_gan(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    for &s in d_real.iter().chain(d_fake) {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Param(format!("sigmoid score {s} outside [0, 1]")));
        }
    }
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Param("scores must be non-empty".into()));
    }
    let clamp = |p: f64| p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
    let d_loss = -mean(&d_real.iter().map(|&p| clamp(p).ln()).collect::<Vec<_>>())
        - mean(&d_fake.iter().map(|&p| (1.0 - clamp(p)).ln()).collect::<Vec<_>>());
    let g_loss = -mean(&d_fake.iter().map(|&p| clamp(p).ln()).collect::<Vec<_>>());
    Ok((d_loss, g_loss))
}

/// Least-squares objective on unbounded critic scores with labels
/// `(a, b, c)` = (fake target, real target, generator target).
///
/// `d_loss = 0.5 E[(D(x) - b)^2] + 0.5 E[(D(G(z)) - a)^2]`,
/// `g_loss = 0.5 E[(D(G(z)) - c)^2]`.
pub fn loss_lsgan(d_real: &[f64], d_fake: &[f64], targets: (f64, f64, f64)) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Param("scores must be non-empty".into()));
    }
    let (a, b, c) = targets;
    let d_loss = 0.5 * mean(&d_real.iter().map(|&s| (s - b).powi(2)).collect::<Vec<_>>())
        + 0.5 * mean(&d_fake.iter().map(|&s| (s - a).powi(2)).collect::<Vec<_>>());
    let g_loss = 0.5 * mean(&d_fake.iter().map(|&s| (s - c).powi(2)).collect::<Vec<_>>());
    Ok((d_loss, g_loss))
}

/// Wasserstein critic objective with an externally computed gradient
/// penalty: `d_loss = mean(d_fake) - mean(d_real) + gp`,
/// `g_loss = -mean(d_fake)`.
pub fn loss_wgangp(d_real: &[f64], d_fake: &[f64], gp: f64) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Param("scores must be non-empty".into()));
    }
    let d_loss = mean(d_fake) - mean(d_real) + gp;
    let g_loss = -mean(d_fake);
    Ok((d_loss, g_loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gan_closed_forms() {
        // Uninformative discriminator: d_loss = 2 ln 2, g_loss = ln 2.
        let (d, g) = loss_gan(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);

        // Perfect discriminator limit.
        let eps = 1e-6;
        let (d, _) = loss_gan(&[1.0 - eps], &[eps]).unwrap();
        assert!(d < 3e-6);

        // Exact zero is clamped to a finite loss.
        let (_, g) = loss_gan(&[0.5], &[0.0]).unwrap();
        assert!(g.is_finite());
        assert!((g - (-LOG_CLAMP.ln())).abs() < 1e-9);

        assert!(loss_gan(&[1.5], &[0.5]).is_err());
        assert!(loss_gan(&[-0.1], &[0.5]).is_err());
    }

    #[test]
    fn lsgan_closed_forms() {
        let t = (0.0, 1.0, 1.0);
        let (d, _) = loss_lsgan(&[1.0, 1.0], &[0.0], t).unwrap();
        assert_eq!(d, 0.0);

        let (_, g) = loss_lsgan(&[0.0], &[1.0], t).unwrap();
        assert_eq!(g, 0.0);

        let (d, _) = loss_lsgan(&[2.0], &[0.5], t).unwrap();
        assert!((d - 0.625).abs() < 1e-15);
    }

    #[test]
    fn wgangp_closed_forms() {
        let (d, _) = loss_wgangp(&[0.3, 0.7], &[0.3, 0.7], 0.0).unwrap();
        assert_eq!(d, 0.0);

        let (d, g) = loss_wgangp(&[1.0], &[0.0], 0.0).unwrap();
        assert_eq!(d, -1.0);
        assert_eq!(g, 0.0);

        // gp is purely additive.
        let (d0, _) = loss_wgangp(&[0.2], &[0.9], 0.0).unwrap();
        let (d1, _) = loss_wgangp(&[0.2], &[0.9], 3.5).unwrap();
        assert!((d1 - d0 - 3.5).abs() < 1e-15);
    }
}
