use std::f64::consts::PI;

use num_complex::Complex64;

use super::RawRecording;
use crate::error::{Error, Result};

/// Band-pass Butterworth filter settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Order of the low-pass prototype; the band-pass has twice as many poles.
    pub order: usize,
    /// Run forward and backward for zero phase distortion.
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_hz: 0.9,
            high_hz: 5.0,
            order: 4,
            zero_phase: true,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyquist) {
            return Err(Error::config(format!(
                "band {}..{} Hz must satisfy 0 < low < high < {nyquist} Hz",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 {
            return Err(Error::config("filter order must be >= 1"));
        }
        Ok(())
    }
}

/// Biquad `b0 + b1 z^-1 + b2 z^-2 / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondOrderSection {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl SecondOrderSection {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = 1.0 + self.a[0] * zi + self.a[1] * zi * zi;
        num / den
    }

    /// Transposed direct-form II state at rest under a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let ys = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * ys;
        let z1 = b1 - a1 * ys + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Digital Butterworth band-pass as a cascade of `order` biquads, designed
/// through the analog prototype, low-pass to band-pass transform and a
/// pre-warped bilinear transform. Unity gain at the band's geometric centre.
pub fn design_bandpass(spec: &FilterSpec, sample_rate_hz: f64) -> Result<Vec<SecondOrderSection>> {
    spec.validate(sample_rate_hz)?;
    let n = spec.order;
    let fs2 = 2.0 * sample_rate_hz;
    let wl = fs2 * (PI * spec.low_hz / sample_rate_hz).tan();
    let wh = fs2 * (PI * spec.high_hz / sample_rate_hz).tan();
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();

    let mut poles = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let theta = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let d = (half * half - w0 * w0).sqrt();
        for s in [half + d, half - d] {
            poles.push((fs2 + s) / (fs2 - s));
        }
    }

    let tol = 1e-10;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|z| z.im > tol).collect();
    let mut real: Vec<f64> = poles.iter().filter(|z| z.im.abs() <= tol).map(|z| z.re).collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<SecondOrderSection> = complex
        .iter()
        .map(|z| SecondOrderSection {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * z.re, z.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push(SecondOrderSection {
            b: [1.0, 0.0, -1.0],
            a: [-(r1 + r2), r1 * r2],
        });
    }
    if sections.len() != n {
        return Err(Error::config("band-pass design produced an unexpected pole layout"));
    }

    let omega0 = 2.0 * (w0 / fs2).atan();
    let z0 = Complex64::from_polar(1.0, omega0);
    let mag = sections.iter().map(|s| s.response(z0)).product::<Complex64>().norm();
    let per_section = mag.powf(-1.0 / n as f64);
    for s in &mut sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }
    Ok(sections)
}

fn sosfilt(sections: &[SecondOrderSection], x: &mut [f64], initial: f64) {
    let mut scale = initial;
    for s in sections {
        let [mut z1, mut z2] = s.step_state();
        z1 *= scale;
        z2 *= scale;
        scale *= s.dc_gain();
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Band-pass filters a recording. Labels pass through untouched.
///
/// Zero-phase mode pads both ends with an odd reflection, starts each pass
/// from the steady state for its first sample and runs the cascade forward
/// then backward.
pub fn bandpass_filter(rec: &RawRecording, spec: &FilterSpec) -> Result<RawRecording> {
    rec.validate()?;
    let sections = design_bandpass(spec, rec.sample_rate_hz)?;
    let n = rec.samples.len();
    if n < 3 * spec.order || n < 2 {
        return Err(Error::input(format!(
            "recording of {n} samples is too short for an order-{} filter",
            spec.order
        )));
    }
    let samples = if spec.zero_phase {
        let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
        let x = &rec.samples;
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let first = ext[0];
        sosfilt(&sections, &mut ext, first);
        ext.reverse();
        let first = ext[0];
        sosfilt(&sections, &mut ext, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    } else {
        let mut y = rec.samples.clone();
        let first = y[0];
        sosfilt(&sections, &mut y, first);
        y
    };
    Ok(RawRecording {
        samples,
        ..rec.clone()
    })
}
