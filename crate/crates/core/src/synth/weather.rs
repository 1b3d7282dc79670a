use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeatherKind {
    Rain,
    Fog,
    Snow,
    Mix,
    Clear,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 5] = [
        WeatherKind::Rain,
        WeatherKind::Fog,
        WeatherKind::Snow,
        WeatherKind::Mix,
        WeatherKind::Clear,
    ];

    /// Row index used by per-weather tables (routing scores, accuracies).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            WeatherKind::Rain => "rain",
            WeatherKind::Fog => "fog",
            WeatherKind::Snow => "snow",
            WeatherKind::Mix => "mix",
            WeatherKind::Clear => "clear",
        }
    }
}

impl fmt::Display for WeatherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeatherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeatherKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown weather kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FogParams {
    pub beta: f64,
    pub airlight: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainParams {
    pub density: f64,
    pub length: f64,
    pub angle_deg: f64,
    pub brightness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnowParams {
    pub density: f64,
    pub radius_min: f64,
    pub radius_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeatherComponent {
    Fog(FogParams),
    Rain(RainParams),
    Snow(SnowParams),
}

impl WeatherComponent {
    pub fn kind(&self) -> WeatherKind {
        match self {
            WeatherComponent::Fog(_) => WeatherKind::Fog,
            WeatherComponent::Rain(_) => WeatherKind::Rain,
            WeatherComponent::Snow(_) => WeatherKind::Snow,
        }
    }

    fn order(&self) -> usize {
        match self {
            WeatherComponent::Fog(_) => 0,
            WeatherComponent::Rain(_) => 1,
            WeatherComponent::Snow(_) => 2,
        }
    }
}

/// Everything needed to regenerate a degradation from a clean image.
#[derive(Clone, Debug, PartialEq)]
pub enum WeatherParams {
    Clear,
    Single(WeatherComponent),
    Mix(Vec<WeatherComponent>),
}

impl WeatherParams {
    pub fn kind(&self) -> WeatherKind {
        match self {
            WeatherParams::Clear => WeatherKind::Clear,
            WeatherParams::Single(c) => c.kind(),
            WeatherParams::Mix(_) => WeatherKind::Mix,
        }
    }

    /// Weather kinds present in a mixture; a single weather lists itself, clear lists nothing.
    pub fn components(&self) -> Vec<WeatherKind> {
        match self {
            WeatherParams::Clear => vec![],
            WeatherParams::Single(c) => vec![c.kind()],
            WeatherParams::Mix(cs) => cs.iter().map(|c| c.kind()).collect(),
        }
    }

    pub fn apply(&self, img: &Tensor, seed: u64) -> Result<Tensor> {
        match self {
            WeatherParams::Clear => Ok(img.clone()),
            WeatherParams::Single(c) => apply_component(img, c, seed),
            WeatherParams::Mix(cs) => apply_mix(img, cs, seed),
        }
    }
}

/// Vertical ramp: depth 1 on the top row falling to 0.2 on the bottom row.
pub fn default_depth(height: usize, width: usize) -> Vec<f64> {
    let denom = (height.max(2) - 1) as f64;
    (0..height)
        .flat_map(|y| std::iter::repeat_n(1.0 - 0.8 * y as f64 / denom, width))
        .collect()
}

/// Atmospheric scattering: `I = J·t + A·(1 − t)`, `t = exp(−beta·depth)`.
pub fn apply_fog(img: &Tensor, params: &FogParams, depth: Option<&[f64]>) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if params.beta < 0.0 || params.airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Parameter(format!(
            "invalid fog parameters {params:?}"
        )));
    }
    let ramp;
    let depth = match depth {
        Some(d) => {
            if d.len() != h * w || d.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Parameter(
                    "depth map must be H×W with values in [0, 1]".into(),
                ));
            }
            d
        }
        None => {
            ramp = default_depth(h, w);
            &ramp
        }
    };
    let mut out = img.clone();
    let plane = h * w;
    for (k, chan) in out.data_mut().chunks_mut(plane).enumerate().take(c) {
        let a = params.airlight[k.min(2)];
        for (p, v) in chan.iter_mut().enumerate() {
            let t = (-params.beta * depth[p]).exp();
            *v = (*v * t + a * (1.0 - t)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Per-pixel streak coverage in `[0, 1]`. Streak `i` is identical for every density, so a
/// higher density paints a superset of the streaks of a lower one.
pub fn rain_mask(height: usize, width: usize, params: &RainParams, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&params.density) || params.length < 1.0 {
        return Err(Error::Parameter(format!(
            "invalid rain parameters {params:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (params.density * (height * width) as f64 / 12.0).round() as usize;
    let angle = params.angle_deg.to_radians();
    let (dx, dy) = (angle.sin(), angle.cos());
    let mut mask = vec![0.0f64; height * width];
    for _ in 0..count {
        let len = params.length * rng.gen_range(0.7..1.3);
        let x0 = rng.gen_range(-len..width as f64 + len);
        let y0 = rng.gen_range(-len..height as f64);
        let alpha = rng.gen_range(0.5..1.0);
        let steps = (len * 2.0).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 * 0.5;
            let (x, y) = (x0 + dx * t, y0 + dy * t);
            if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
                continue;
            }
            let p = y as usize * width + x as usize;
            mask[p] = (mask[p] + alpha * 0.5).min(1.0);
        }
    }
    Ok(mask)
}

/// Additive bright streaks: `out = clip(img + brightness·coverage)`.
pub fn apply_rain(img: &Tensor, params: &RainParams, seed: u64) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    if !(0.0..=1.0).contains(&params.brightness) {
        return Err(Error::Parameter(format!(
            "rain brightness {} outside [0, 1]",
            params.brightness
        )));
    }
    let mask = rain_mask(h, w, params, seed)?;
    let mut out = img.clone();
    for chan in out.data_mut().chunks_mut(h * w) {
        for (v, m) in chan.iter_mut().zip(&mask) {
            *v = (*v + params.brightness * m).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Soft-disk opacity per pixel; flakes nest across densities like rain streaks do.
pub fn snow_mask(height: usize, width: usize, params: &SnowParams, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&params.density)
        || params.radius_min <= 0.0
        || params.radius_max < params.radius_min
    {
        return Err(Error::Parameter(format!(
            "invalid snow parameters {params:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (params.density * (height * width) as f64 / 20.0).round() as usize;
    // transparency product over flakes
    let mut clear = vec![1.0f64; height * width];
    for _ in 0..count {
        let r = if params.radius_max > params.radius_min {
            rng.gen_range(params.radius_min..params.radius_max)
        } else {
            params.radius_min
        };
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let opacity = rng.gen_range(0.6..1.0);
        let reach = r + 1.0;
        let (y0, y1) = (
            (cy - reach).floor().max(0.0) as usize,
            ((cy + reach).ceil() as usize).min(height),
        );
        let (x0, x1) = (
            (cx - reach).floor().max(0.0) as usize,
            ((cx + reach).ceil() as usize).min(width),
        );
        for y in y0..y1 {
            for x in x0..x1 {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let a = opacity * (1.0 - d / reach).clamp(0.0, 1.0).sqrt();
                clear[y * width + x] *= 1.0 - a;
            }
        }
    }
    Ok(clear.into_iter().map(|c| 1.0 - c).collect())
}

/// White soft disks alpha-blended over the image.
pub fn apply_snow(img: &Tensor, params: &SnowParams, seed: u64) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    let mask = snow_mask(h, w, params, seed)?;
    let mut out = img.clone();
    for chan in out.data_mut().chunks_mut(h * w) {
        for (v, a) in chan.iter_mut().zip(&mask) {
            *v = (*v + a * (1.0 - *v)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Seed used by the snow layer of a mixture; the rain layer uses the mixture seed itself.
pub fn snow_seed(seed: u64) -> u64 {
    seed ^ 0x5A0F_1A4E_D00D_5EED
}

fn apply_component(img: &Tensor, c: &WeatherComponent, seed: u64) -> Result<Tensor> {
    match c {
        WeatherComponent::Fog(p) => apply_fog(img, p, None),
        WeatherComponent::Rain(p) => apply_rain(img, p, seed),
        WeatherComponent::Snow(p) => apply_snow(img, p, seed),
    }
}

/// Applies two or three distinct components in the fixed order fog, rain, snow.
pub fn apply_mix(img: &Tensor, components: &[WeatherComponent], seed: u64) -> Result<Tensor> {
    if components.len() < 2 {
        return Err(Error::Parameter(format!(
            "a mixture needs at least two components, got {}",
            components.len()
        )));
    }
    let mut sorted = components.to_vec();
    sorted.sort_by_key(|c| c.order());
    if sorted.windows(2).any(|p| p[0].order() == p[1].order()) {
        return Err(Error::Parameter(
            "mixture components must be distinct".into(),
        ));
    }
    let mut out = img.clone();
    for c in &sorted {
        let s = match c {
            WeatherComponent::Snow(_) => snow_seed(seed),
            _ => seed,
        };
        out = apply_component(&out, c, s)?;
    }
    Ok(out)
}

/// Draws desk-scale parameters for one weather kind. Particle sizes scale with image height.
pub fn sample_params(kind: WeatherKind, height: usize, rng: &mut ChaCha8Rng) -> WeatherParams {
    let scale = height as f64 / 64.0;
    let fog = |rng: &mut ChaCha8Rng| {
        let a = rng.gen_range(0.75..0.95);
        WeatherComponent::Fog(FogParams {
            beta: rng.gen_range(0.6..1.6),
            airlight: [a, a, (a + rng.gen_range(0.0..0.04)).min(1.0)],
        })
    };
    let rain = |rng: &mut ChaCha8Rng| {
        WeatherComponent::Rain(RainParams {
            density: rng.gen_range(0.15..0.5),
            length: (rng.gen_range(4.0..10.0) * scale).max(2.0),
            angle_deg: rng.gen_range(-20.0..20.0),
            brightness: rng.gen_range(0.25..0.45),
        })
    };
    let snow = |rng: &mut ChaCha8Rng| {
        let lo = rng.gen_range(0.6..1.2) * scale;
        WeatherComponent::Snow(SnowParams {
            density: rng.gen_range(0.1..0.4),
            radius_min: lo.max(0.5),
            radius_max: (lo + rng.gen_range(0.4..1.0) * scale).max(0.6),
        })
    };
    match kind {
        WeatherKind::Clear => WeatherParams::Clear,
        WeatherKind::Fog => WeatherParams::Single(fog(rng)),
        WeatherKind::Rain => WeatherParams::Single(rain(rng)),
        WeatherKind::Snow => WeatherParams::Single(snow(rng)),
        WeatherKind::Mix => {
            let mut comps = match rng.gen_range(0..4) {
                0 => vec![fog(rng), rain(rng)],
                1 => vec![fog(rng), snow(rng)],
                2 => vec![rain(rng), snow(rng)],
                _ => vec![fog(rng), rain(rng), snow(rng)],
            };
            comps.sort_by_key(|c| c.order());
            WeatherParams::Mix(comps)
        }
    }
}

impl fmt::Display for WeatherComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeatherComponent::Fog(p) => write!(
                f,
                "fog:beta={},airlight={}/{}/{}",
                p.beta, p.airlight[0], p.airlight[1], p.airlight[2]
            ),
            WeatherComponent::Rain(p) => write!(
                f,
                "rain:density={},length={},angle={},brightness={}",
                p.density, p.length, p.angle_deg, p.brightness
            ),
            WeatherComponent::Snow(p) => write!(
                f,
                "snow:density={},rmin={},rmax={}",
                p.density, p.radius_min, p.radius_max
            ),
        }
    }
}

impl fmt::Display for WeatherParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeatherParams::Clear => f.write_str("clear"),
            WeatherParams::Single(c) => write!(f, "{c}"),
            WeatherParams::Mix(cs) => {
                let parts: Vec<String> = cs.iter().map(|c| c.to_string()).collect();
                write!(f, "mix[{}]", parts.join(";"))
            }
        }
    }
}

fn parse_component(s: &str) -> Result<WeatherComponent> {
    let bad = || Error::Format(format!("malformed weather component `{s}`"));
    let (name, rest) = s.split_once(':').ok_or_else(bad)?;
    let mut fields = std::collections::HashMap::new();
    for kv in rest.split(',') {
        let (k, v) = kv.split_once('=').ok_or_else(bad)?;
        fields.insert(k, v);
    }
    let num =
        |k: &str| -> Result<f64> { fields.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
    Ok(match name {
        "fog" => {
            let a: Vec<f64> = fields
                .get("airlight")
                .ok_or_else(bad)?
                .split('/')
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if a.len() != 3 {
                return Err(bad());
            }
            WeatherComponent::Fog(FogParams {
                beta: num("beta")?,
                airlight: [a[0], a[1], a[2]],
            })
        }
        "rain" => WeatherComponent::Rain(RainParams {
            density: num("density")?,
            length: num("length")?,
            angle_deg: num("angle")?,
            brightness: num("brightness")?,
        }),
        "snow" => WeatherComponent::Snow(SnowParams {
            density: num("density")?,
            radius_min: num("rmin")?,
            radius_max: num("rmax")?,
        }),
        _ => return Err(bad()),
    })
}

impl FromStr for WeatherParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "clear" {
            return Ok(WeatherParams::Clear);
        }
        if let Some(inner) = s.strip_prefix("mix[").and_then(|r| r.strip_suffix(']')) {
            return inner
                .split(';')
                .map(parse_component)
                .collect::<Result<_>>()
                .map(WeatherParams::Mix);
        }
        parse_component(s).map(WeatherParams::Single)
    }
}
