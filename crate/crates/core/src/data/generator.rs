//! Procedural multi-domain images.
//!
//! A class is a binary shape on an `S x S` grid; a domain is a rendering
//! style. The class signal (where the shape is) is shared across domains,
//! while the texture signal (how its pixels are lit) differs per domain.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Example, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 7] = ["cross", "square", "diagonal", "tee", "ell", "disc", "chevron"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    /// Smooth shading plus additive Gaussian noise.
    Photo,
    /// Random per-image fill intensity modulated by a low-frequency ramp.
    Art,
    /// Flat fill with a thick bright outline.
    Cartoon,
    /// Outline only, with stroke pressure variation and pixel jitter.
    Sketch,
}

impl Style {
    pub fn name(self) -> &'static str {
        match self {
            Style::Photo => "photo",
            Style::Art => "art",
            Style::Cartoon => "cartoon",
            Style::Sketch => "sketch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "photo" => Some(Style::Photo),
            "art" => Some(Style::Art),
            "cartoon" => Some(Style::Cartoon),
            "sketch" => Some(Style::Sketch),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub domains: Vec<Style>,
    pub per_class: usize,
    pub side: usize,
    pub noise: f64,
    /// Largest translation in pixels along each axis.
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            classes: 7,
            domains: vec![Style::Photo, Style::Art, Style::Cartoon, Style::Sketch],
            per_class: 300,
            side: 16,
            noise: 0.15,
            max_shift: 2,
            seed: 0,
        }
    }
}

/// Binary shape for class `class` on a `side x side` grid, centred with a
/// 3-pixel margin.
pub fn prototype_mask(class: usize, side: usize) -> Vec<bool> {
    let s = side as i64;
    let lo = 3;
    let hi = s - 4;
    let t = (s / 8).max(2);
    let band_lo = (s - t) / 2;
    let band = |v: i64| (band_lo..band_lo + t).contains(&v);
    let in_box = |v: i64| (lo..=hi).contains(&v);
    let centre = s as f64 / 2.0;
    let radius = (hi - lo + 1) as f64 / 2.0;
    let half_width = radius;
    let disc = radius / 2.0;
    let height = (hi - lo) as f64;
    let mut mask = vec![false; side * side];
    for i in 0..s {
        for j in 0..s {
            let inside = in_box(i) && in_box(j);
            let on = match class {
                0 => (in_box(i) && band(j)) || (in_box(j) && band(i)),
                1 => inside && (i < lo + t || i > hi - t || j < lo + t || j > hi - t),
                2 => inside && (i - j).abs() < t,
                3 => (in_box(j) && (lo..lo + t).contains(&i)) || (in_box(i) && band(j)),
                4 => (in_box(i) && (lo..lo + t).contains(&j)) || (in_box(j) && (hi - t + 1..=hi).contains(&i)),
                5 => {
                    let dy = i as f64 + 0.5 - centre;
                    let dx = j as f64 + 0.5 - centre;
                    dx * dx + dy * dy <= disc * disc
                }
                6 => {
                    let dx = libm::fabs(j as f64 + 0.5 - centre);
                    let arm = (i - lo) as f64 * half_width / height;
                    inside && libm::fabs(dx - arm) <= t as f64 / 2.0 + 0.25
                }
                _ => false,
            };
            mask[(i * s + j) as usize] = on;
        }
    }
    mask
}

fn shift_mask(mask: &[bool], side: usize, dx: i64, dy: i64) -> Vec<bool> {
    let s = side as i64;
    let mut out = vec![false; mask.len()];
    for i in 0..s {
        for j in 0..s {
            let (si, sj) = (i - dy, j - dx);
            if (0..s).contains(&si) && (0..s).contains(&sj) {
                out[(i * s + j) as usize] = mask[(si * s + sj) as usize];
            }
        }
    }
    out
}

/// Mask pixels with a 4-neighbour outside the mask.
fn outline(mask: &[bool], side: usize) -> Vec<bool> {
    let s = side as i64;
    let at = |i: i64, j: i64| (0..s).contains(&i) && (0..s).contains(&j) && mask[(i * s + j) as usize];
    let mut out = vec![false; mask.len()];
    for i in 0..s {
        for j in 0..s {
            if at(i, j) && !(at(i - 1, j) && at(i + 1, j) && at(i, j - 1) && at(i, j + 1)) {
                out[(i * s + j) as usize] = true;
            }
        }
    }
    out
}

/// Mask pixels within one step of the outline.
fn thick_outline(mask: &[bool], side: usize) -> Vec<bool> {
    let s = side as i64;
    let edge = outline(mask, side);
    let at = |i: i64, j: i64| (0..s).contains(&i) && (0..s).contains(&j) && edge[(i * s + j) as usize];
    let mut out = vec![false; mask.len()];
    for i in 0..s {
        for j in 0..s {
            let k = (i * s + j) as usize;
            out[k] = mask[k] && (at(i, j) || at(i - 1, j) || at(i + 1, j) || at(i, j - 1) || at(i, j + 1));
        }
    }
    out
}

fn render(style: Style, mask: &[bool], side: usize, noise: f64, r: &mut rng::Rng) -> Vec<f64> {
    let n = side * side;
    let mut img = vec![0.0; n];
    let centre = side as f64 / 2.0;
    match style {
        Style::Photo => {
            // fixed light from the top-left
            for (k, px) in img.iter_mut().enumerate() {
                if mask[k] {
                    let (i, j) = ((k / side) as f64, (k % side) as f64);
                    let d = ((i + 0.5 - centre) + (j + 0.5 - centre)) / side as f64;
                    *px = 0.65 - 0.35 * d;
                }
            }
            if noise > 0.0 {
                let normal = Normal::new(0.0, noise).expect("positive sigma");
                for px in img.iter_mut() {
                    *px += normal.sample(r);
                }
            }
        }
        Style::Art => {
            let fill: f64 = r.random_range(0.35..0.95);
            let angle: f64 = r.random_range(0.0..core::f64::consts::TAU);
            let (sy, sx) = (libm::sin(angle), libm::cos(angle));
            for (k, px) in img.iter_mut().enumerate() {
                if mask[k] {
                    let (i, j) = ((k / side) as f64, (k % side) as f64);
                    let ramp = ((i + 0.5 - centre) * sy + (j + 0.5 - centre) * sx) / side as f64;
                    *px = fill * (0.75 + 0.5 * ramp);
                }
            }
        }
        Style::Cartoon => {
            // flat fill and ink, one tone of each per image
            let ink: f64 = r.random_range(0.85..1.0);
            let fill: f64 = r.random_range(0.3..0.6);
            let edge = thick_outline(mask, side);
            for (k, px) in img.iter_mut().enumerate() {
                if edge[k] {
                    *px = ink;
                } else if mask[k] {
                    *px = fill;
                }
            }
        }
        Style::Sketch => {
            let edge = outline(mask, side);
            let p_jitter = (2.0 * noise).min(1.0);
            let s = side as i64;
            for (k, &on) in edge.iter().enumerate() {
                if !on {
                    continue;
                }
                let pressure: f64 = r.random_range(0.7..1.0);
                let (mut i, mut j) = ((k / side) as i64, (k % side) as i64);
                if p_jitter > 0.0 && r.random_bool(p_jitter) {
                    i = (i + r.random_range(-1..=1)).clamp(0, s - 1);
                    j = (j + r.random_range(-1..=1)).clamp(0, s - 1);
                }
                let px = &mut img[(i * s + j) as usize];
                *px = px.max(pressure);
            }
        }
    }
    for px in img.iter_mut() {
        *px = px.clamp(0.0, 1.0);
    }
    img
}

/// Deterministic multi-domain dataset of rendered class prototypes.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<MultiDomainDataset> {
    if config.classes > CLASS_NAMES.len() {
        return Err(Error::Config(format!(
            "{} classes requested, only {} prototypes available",
            config.classes,
            CLASS_NAMES.len()
        )));
    }
    if config.classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if config.side < 16 {
        return Err(Error::Config(format!("image side {} is below 16", config.side)));
    }
    if config.domains.is_empty() {
        return Err(Error::Config("no domains".into()));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::Config("noise must be finite and non-negative".into()));
    }
    if config.max_shift > 3 {
        return Err(Error::Config("max_shift is at most 3 (the prototype margin)".into()));
    }
    let side = config.side;
    let prototypes: Vec<Vec<bool>> = (0..config.classes).map(|c| prototype_mask(c, side)).collect();
    let shift = config.max_shift as i64;

    let mut domains = Vec::with_capacity(config.domains.len());
    for (d, &style) in config.domains.iter().enumerate() {
        let mut id = String::from(style.name());
        if config.domains[..d].contains(&style) {
            id = format!("{id}-{d}");
        }
        let mut r = rng::stream(config.seed, &format!("domain/{d}/{id}"));
        let mut examples = Vec::with_capacity(config.classes * config.per_class);
        for (label, proto) in prototypes.iter().enumerate() {
            for _ in 0..config.per_class {
                let dx = r.random_range(-shift..=shift);
                let dy = r.random_range(-shift..=shift);
                let mask = shift_mask(proto, side, dx, dy);
                let img = render(style, &mask, side, config.noise, &mut r);
                examples.push(Example {
                    features: Tensor::vector(img),
                    label,
                    domain: d,
                });
            }
        }
        domains.push((id, examples));
    }
    let classes = CLASS_NAMES[..config.classes].iter().map(|&s| s.into()).collect();
    MultiDomainDataset::new(classes, domains)
}
