use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `count` experts sharing one depthwise kernel size (`1` means no conv branch).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertGroup {
    pub count: usize,
    pub kernel: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouterKind {
    Plain,
    WeatherAware,
}

impl fmt::Display for RouterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouterKind::Plain => "plain",
            RouterKind::WeatherAware => "weather",
        })
    }
}

impl FromStr for RouterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(RouterKind::Plain),
            "weather" => Ok(RouterKind::WeatherAware),
            _ => Err(Error::Parameter(format!(
                "unknown router `{s}` (expected plain or weather)"
            ))),
        }
    }
}

/// Named architecture presets.
pub const PRESETS: [&str; 5] = ["desk", "tiny", "n4-k0", "n4-k1", "n16-k4"];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Conv head/tail width `C`.
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub expert_groups: Vec<ExpertGroup>,
    pub hidden_ratio: usize,
    pub router: RouterKind,
    /// Route on the layer-normed tokens instead of the block input.
    pub route_on_normed: bool,
    /// Width of the classifier tokens, which are also the router's weather tokens.
    pub weather_dim: usize,
    pub classifier_depth: usize,
    pub classifier_heads: usize,
    pub num_weather_classes: usize,
    /// Weight of the switch-style load-balancing loss; 0 disables it.
    pub aux_loss_weight: f64,
}

impl ModelConfig {
    /// Default desk-scale architecture: four experts with kernels 1, 3, 5, 7 and top-2 gating.
    pub fn desk(height: usize, width: usize) -> Self {
        ModelConfig {
            image_height: height,
            image_width: width,
            channels: 8,
            patch_size: 4,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            num_experts: 4,
            top_k: 2,
            expert_groups: [1, 3, 5, 7]
                .map(|kernel| ExpertGroup { count: 1, kernel })
                .to_vec(),
            hidden_ratio: 2,
            router: RouterKind::WeatherAware,
            route_on_normed: false,
            weather_dim: 16,
            classifier_depth: 1,
            classifier_heads: 2,
            num_weather_classes: 5,
            aux_loss_weight: 0.0,
        }
    }

    /// Gradient-check scale: D=8, L=1, two experts, top-1.
    pub fn tiny(height: usize, width: usize) -> Self {
        ModelConfig {
            channels: 4,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            num_experts: 2,
            top_k: 1,
            expert_groups: vec![
                ExpertGroup {
                    count: 1,
                    kernel: 1,
                },
                ExpertGroup {
                    count: 1,
                    kernel: 3,
                },
            ],
            weather_dim: 8,
            ..Self::desk(height, width)
        }
    }

    /// `n4-k0` gates densely over four experts; `n4-k1` is the top-1 reading of the same label.
    pub fn preset(name: &str, height: usize, width: usize) -> Result<Self> {
        let base = Self::desk(height, width);
        let cfg = match name {
            "desk" => base,
            "tiny" => Self::tiny(height, width),
            "n4-k0" => ModelConfig { top_k: 4, ..base },
            "n4-k1" => ModelConfig { top_k: 1, ..base },
            "n16-k4" => ModelConfig {
                num_experts: 16,
                top_k: 4,
                expert_groups: [1, 3, 5, 7]
                    .map(|kernel| ExpertGroup { count: 4, kernel })
                    .to_vec(),
                ..base
            },
            _ => {
                return Err(Error::Parameter(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_height / self.patch_size,
            self.image_width / self.patch_size,
        )
    }

    pub fn num_tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    /// Kernel size of every expert, in order.
    pub fn expert_kernels(&self) -> Vec<usize> {
        self.expert_groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.kernel, g.count))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("num_experts", self.num_experts),
            ("top_k", self.top_k),
            ("hidden_ratio", self.hidden_ratio),
            ("weather_dim", self.weather_dim),
            ("classifier_heads", self.classifier_heads),
            ("num_weather_classes", self.num_weather_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if !self.image_height.is_multiple_of(self.patch_size)
            || !self.image_width.is_multiple_of(self.patch_size)
        {
            return Err(Error::Dimension(format!(
                "patch_size {} does not divide {}×{}",
                self.patch_size, self.image_height, self.image_width
            )));
        }
        let total: usize = self.expert_groups.iter().map(|g| g.count).sum();
        if total != self.num_experts {
            return bad(format!(
                "expert groups hold {total} experts but num_experts is {}",
                self.num_experts
            ));
        }
        if self.top_k > self.num_experts {
            return bad(format!(
                "top_k {} exceeds num_experts {}",
                self.top_k, self.num_experts
            ));
        }
        if let Some(g) = self.expert_groups.iter().find(|g| g.kernel % 2 == 0) {
            return bad(format!("expert kernel {} is not odd", g.kernel));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "heads {} do not divide embed_dim {}",
                self.heads, self.embed_dim
            ));
        }
        if !self.weather_dim.is_multiple_of(self.classifier_heads) {
            return bad(format!(
                "classifier_heads {} do not divide weather_dim {}",
                self.classifier_heads, self.weather_dim
            ));
        }
        if !(self.aux_loss_weight >= 0.0 && self.aux_loss_weight.is_finite()) {
            return bad(format!(
                "aux_loss_weight must be finite and non-negative, got {}",
                self.aux_loss_weight
            ));
        }
        Ok(())
    }

    /// Ordered `key=value` pairs; the inverse of [`ModelConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let groups = self
            .expert_groups
            .iter()
            .map(|g| format!("{}x{}", g.count, g.kernel))
            .collect::<Vec<_>>()
            .join(",");
        [
            ("image_height", self.image_height.to_string()),
            ("image_width", self.image_width.to_string()),
            ("channels", self.channels.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("depth", self.depth.to_string()),
            ("heads", self.heads.to_string()),
            ("num_experts", self.num_experts.to_string()),
            ("top_k", self.top_k.to_string()),
            ("expert_groups", groups),
            ("hidden_ratio", self.hidden_ratio.to_string()),
            ("router", self.router.to_string()),
            ("route_on_normed", self.route_on_normed.to_string()),
            ("weather_dim", self.weather_dim.to_string()),
            ("classifier_depth", self.classifier_depth.to_string()),
            ("classifier_heads", self.classifier_heads.to_string()),
            ("num_weather_classes", self.num_weather_classes.to_string()),
            ("aux_loss_weight", format!("{:?}", self.aux_loss_weight)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("model config is missing `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("model config `{key}` is not an integer")))
        };
        let flag = |key: &str| -> Result<bool> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("model config `{key}` is not a boolean")))
        };
        let expert_groups = get("expert_groups")?
            .split(',')
            .map(|g| {
                let (c, k) = g
                    .split_once('x')
                    .ok_or_else(|| Error::Format(format!("bad expert group `{g}`")))?;
                let parse = |s: &str| {
                    s.parse()
                        .map_err(|_| Error::Format(format!("bad expert group `{g}`")))
                };
                Ok(ExpertGroup {
                    count: parse(c)?,
                    kernel: parse(k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelConfig {
            image_height: num("image_height")?,
            image_width: num("image_width")?,
            channels: num("channels")?,
            patch_size: num("patch_size")?,
            embed_dim: num("embed_dim")?,
            depth: num("depth")?,
            heads: num("heads")?,
            num_experts: num("num_experts")?,
            top_k: num("top_k")?,
            expert_groups,
            hidden_ratio: num("hidden_ratio")?,
            router: get("router")?.parse()?,
            route_on_normed: flag("route_on_normed")?,
            weather_dim: num("weather_dim")?,
            classifier_depth: num("classifier_depth")?,
            classifier_heads: num("classifier_heads")?,
            num_weather_classes: num("num_weather_classes")?,
            aux_loss_weight: get("aux_loss_weight")?.parse().map_err(|_| {
                Error::Format("model config `aux_loss_weight` is not a number".into())
            })?,
        })
    }

    /// First field whose value differs, as `(field, self value, other value)`.
    pub fn first_mismatch(&self, other: &ModelConfig) -> Option<(String, String, String)> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .find(|((_, a), (_, b))| a != b)
            .map(|((k, a), (_, b))| (k, a, b))
    }
}
