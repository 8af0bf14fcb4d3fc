//! Layer execution orders for interventions. Indices are 0-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Identity,
    Drop,
    Swap,
    SwapDropBaseline,
    Repeat,
    Custom,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Identity => "identity",
            ScheduleKind::Drop => "drop",
            ScheduleKind::Swap => "swap",
            ScheduleKind::SwapDropBaseline => "swap_drop_baseline",
            ScheduleKind::Repeat => "repeat",
            ScheduleKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub layer: Option<usize>,
    pub block_start: Option<usize>,
    pub block_len: Option<usize>,
    pub times: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSchedule {
    steps: Vec<usize>,
    kind: ScheduleKind,
    params: ScheduleParams,
    n_layers: usize,
}

impl LayerSchedule {
    pub fn identity(n_layers: usize) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Schedule("a model needs at least one layer".into()));
        }
        Ok(Self {
            steps: (0..n_layers).collect(),
            kind: ScheduleKind::Identity,
            params: ScheduleParams::default(),
            n_layers,
        })
    }

    /// Executes block `layer + 1` before block `layer`.
    pub fn swap(n_layers: usize, layer: usize) -> Result<Self> {
        let mut s = Self::identity(n_layers)?;
        if layer + 1 >= n_layers {
            return Err(Error::Schedule(format!(
                "swap:{layer} needs a successor layer (model has {n_layers})"
            )));
        }
        s.steps.swap(layer, layer + 1);
        s.kind = ScheduleKind::Swap;
        s.params.layer = Some(layer);
        Ok(s)
    }

    /// Skips block `layer`; the residual passes through unchanged.
    pub fn drop(n_layers: usize, layer: usize) -> Result<Self> {
        let mut s = Self::identity(n_layers)?;
        if layer >= n_layers {
            return Err(Error::Schedule(format!(
                "drop:{layer} out of range for {n_layers} layers"
            )));
        }
        s.steps.remove(layer);
        s.kind = ScheduleKind::Drop;
        s.params.layer = Some(layer);
        Ok(s)
    }

    /// The ablation paired with `swap(layer)`: the swap ordering with the
    /// layer that moved later removed.
    pub fn swap_drop_baseline(n_layers: usize, layer: usize) -> Result<Self> {
        let swapped = Self::swap(n_layers, layer)?;
        let steps = swapped
            .steps
            .iter()
            .copied()
            .filter(|&b| b != layer)
            .collect();
        Ok(Self {
            steps,
            kind: ScheduleKind::SwapDropBaseline,
            params: swapped.params,
            n_layers,
        })
    }

    /// Runs each block in `[start, start + len)` `times + 1` times in a row.
    pub fn repeat(n_layers: usize, start: usize, len: usize, times: usize) -> Result<Self> {
        let base = Self::identity(n_layers)?;
        if start + len > n_layers {
            return Err(Error::Schedule(format!(
                "repeat block {start}+{len} overflows {n_layers} layers"
            )));
        }
        let mut steps = Vec::with_capacity(n_layers + len * times);
        for b in base.steps {
            let reps = if (start..start + len).contains(&b) { times + 1 } else { 1 };
            steps.extend(std::iter::repeat(b).take(reps));
        }
        Ok(Self {
            steps,
            kind: ScheduleKind::Repeat,
            params: ScheduleParams {
                layer: None,
                block_start: Some(start),
                block_len: Some(len),
                times: Some(times),
            },
            n_layers,
        })
    }

    pub fn custom(n_layers: usize, steps: Vec<usize>) -> Result<Self> {
        let s = Self {
            steps,
            kind: ScheduleKind::Custom,
            params: ScheduleParams::default(),
            n_layers,
        };
        s.validate(n_layers)?;
        Ok(s)
    }

    /// Checks every step against a model depth.
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if let Some(&bad) = self.steps.iter().find(|&&b| b >= n_layers) {
            return Err(Error::Schedule(format!(
                "step references block {bad} but the model has {n_layers} layers"
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The layer index used to key report rows, if any.
    pub fn key_layer(&self) -> Option<usize> {
        self.params.layer.or(self.params.block_start)
    }

    /// Parses CLI notation against a model depth.
    pub fn parse(notation: &str, n_layers: usize) -> Result<Self> {
        let spec: ScheduleSpec = notation.parse()?;
        spec.build(n_layers)
    }
}

impl fmt::Display for LayerSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.params;
        match self.kind {
            ScheduleKind::Identity => write!(f, "identity"),
            ScheduleKind::Drop => write!(f, "drop:{}", p.layer.unwrap_or_default()),
            ScheduleKind::Swap => write!(f, "swap:{}", p.layer.unwrap_or_default()),
            ScheduleKind::SwapDropBaseline => {
                write!(f, "swap_drop_baseline:{}", p.layer.unwrap_or_default())
            }
            ScheduleKind::Repeat => write!(
                f,
                "repeat:{}+{}x{}",
                p.block_start.unwrap_or_default(),
                p.block_len.unwrap_or_default(),
                p.times.unwrap_or_default()
            ),
            ScheduleKind::Custom => {
                let s: Vec<String> = self.steps.iter().map(ToString::to_string).collect();
                write!(f, "custom:{}", s.join(","))
            }
        }
    }
}

/// A schedule described independently of model depth, as written on the
/// command line: `identity`, `drop:3`, `swap:3`, `repeat:5+5x1`,
/// `custom:0,1,3,2,4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleSpec {
    Identity,
    Drop(usize),
    Swap(usize),
    SwapDropBaseline(usize),
    Repeat { start: usize, len: usize, times: usize },
    Custom(Vec<usize>),
}

impl ScheduleSpec {
    pub fn build(&self, n_layers: usize) -> Result<LayerSchedule> {
        match self {
            ScheduleSpec::Identity => LayerSchedule::identity(n_layers),
            ScheduleSpec::Drop(l) => LayerSchedule::drop(n_layers, *l),
            ScheduleSpec::Swap(l) => LayerSchedule::swap(n_layers, *l),
            ScheduleSpec::SwapDropBaseline(l) => LayerSchedule::swap_drop_baseline(n_layers, *l),
            ScheduleSpec::Repeat { start, len, times } => {
                LayerSchedule::repeat(n_layers, *start, *len, *times)
            }
            ScheduleSpec::Custom(steps) => LayerSchedule::custom(n_layers, steps.clone()),
        }
    }
}

fn parse_index(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Schedule(format!("bad {what} `{s}`")))
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let need = || arg.ok_or_else(|| Error::Schedule(format!("`{head}` needs an argument")));
        match head {
            "identity" if arg.is_none() => Ok(ScheduleSpec::Identity),
            "drop" => Ok(ScheduleSpec::Drop(parse_index(need()?, "layer")?)),
            "swap" => Ok(ScheduleSpec::Swap(parse_index(need()?, "layer")?)),
            "swap_drop_baseline" => Ok(ScheduleSpec::SwapDropBaseline(parse_index(
                need()?,
                "layer",
            )?)),
            "repeat" => {
                let a = need()?;
                let (start, rest) = a
                    .split_once('+')
                    .ok_or_else(|| Error::Schedule(format!("repeat expects START+LENxTIMES, got `{a}`")))?;
                let (len, times) = rest
                    .split_once('x')
                    .ok_or_else(|| Error::Schedule(format!("repeat expects START+LENxTIMES, got `{a}`")))?;
                Ok(ScheduleSpec::Repeat {
                    start: parse_index(start, "start")?,
                    len: parse_index(len, "length")?,
                    times: parse_index(times, "times")?,
                })
            }
            "custom" => {
                let a = need()?;
                if a.trim().is_empty() {
                    return Ok(ScheduleSpec::Custom(Vec::new()));
                }
                let steps = a
                    .split(',')
                    .map(|x| parse_index(x, "step"))
                    .collect::<Result<_>>()?;
                Ok(ScheduleSpec::Custom(steps))
            }
            _ => Err(Error::Schedule(format!("unknown schedule `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_examples() {
        assert_eq!(LayerSchedule::identity(3).unwrap().steps(), &[0, 1, 2]);
        assert_eq!(LayerSchedule::identity(1).unwrap().steps(), &[0]);
        assert!(LayerSchedule::identity(0).is_err());
    }

    #[test]
    fn swap_examples() {
        // 1-based "1-2-4-3-5"
        assert_eq!(LayerSchedule::swap(5, 2).unwrap().steps(), &[0, 1, 3, 2, 4]);
        assert_eq!(LayerSchedule::swap(2, 0).unwrap().steps(), &[1, 0]);
        assert!(LayerSchedule::swap(5, 4).is_err());
    }

    #[test]
    fn drop_examples() {
        // 1-based "1-2-4-5"
        assert_eq!(LayerSchedule::drop(5, 2).unwrap().steps(), &[0, 1, 3, 4]);
        assert!(LayerSchedule::drop(1, 0).unwrap().is_empty());
        assert!(LayerSchedule::drop(5, 5).is_err());
    }

    #[test]
    fn repeat_examples() {
        // 1-based layers 5..7 are 0-based 4..6
        let r = LayerSchedule::repeat(10, 4, 3, 1).unwrap();
        assert_eq!(r.steps(), &[0, 1, 2, 3, 4, 4, 5, 5, 6, 6, 7, 8, 9]);
        assert_eq!(
            LayerSchedule::repeat(6, 2, 3, 0).unwrap().steps(),
            LayerSchedule::identity(6).unwrap().steps()
        );
        let r = LayerSchedule::repeat(12, 5, 5, 1).unwrap();
        assert_eq!(r.len(), 17);
        assert!(LayerSchedule::repeat(6, 4, 3, 1).is_err());
    }

    #[test]
    fn swap_drop_baseline_equals_plain_drop() {
        for n in 2..16 {
            for l in 0..n - 1 {
                let a = LayerSchedule::swap_drop_baseline(n, l).unwrap();
                let b = LayerSchedule::drop(n, l).unwrap();
                assert_eq!(a.steps(), b.steps(), "n={n} l={l}");
            }
        }
    }

    #[test]
    fn notation_roundtrip() {
        for s in ["identity", "drop:3", "swap:3", "repeat:5+5x1", "custom:0,1,3,2,4", "swap_drop_baseline:2"] {
            let parsed = LayerSchedule::parse(s, 12).unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert_eq!(LayerSchedule::parse("custom:", 3).unwrap().len(), 0);
        for bad in ["drop", "swap:x", "repeat:5+5", "wiggle:1", "identity:2", "custom:0,12"] {
            assert!(LayerSchedule::parse(bad, 12).is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn generated_schedules_validate(n in 1usize..40, a in 0usize..40, len in 0usize..10, times in 0usize..4) {
            let id = LayerSchedule::identity(n).unwrap();
            prop_assert_eq!(id.len(), n);
            prop_assert!(id.validate(n).is_ok());
            if a < n {
                let d = LayerSchedule::drop(n, a).unwrap();
                prop_assert_eq!(d.len(), n - 1);
                prop_assert!(d.validate(n).is_ok());
            }
            if a + 1 < n {
                let s = LayerSchedule::swap(n, a).unwrap();
                let diffs: Vec<usize> = (0..n).filter(|&i| s.steps()[i] != i).collect();
                prop_assert_eq!(diffs, vec![a, a + 1]);
            }
            if a + len <= n {
                let r = LayerSchedule::repeat(n, a, len, times).unwrap();
                prop_assert_eq!(r.len(), n + len * times);
                prop_assert!(r.validate(n).is_ok());
            }
            prop_assert!(id.validate(n.saturating_sub(1)).is_err() || n == 0);
        }
    }
}
