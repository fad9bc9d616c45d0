//! Value types for list-like flags. Each prints in a form it parses back.

use std::fmt;
use std::str::FromStr;

use influx::estimation::MixtureModel;
use influx::prediction::Method;
use influx::InfluenceabilityPair;

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodList(pub Vec<Method>);

impl FromStr for MethodList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse())
            .collect::<Result<Vec<Method>, _>>()?;
        if v.is_empty() {
            return Err("empty method list".into());
        }
        Ok(MethodList(v))
    }
}

impl fmt::Display for MethodList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join(&self.0, ","))
    }
}

/// Comma-separated integers and inclusive ranges: `1-5,8,10`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntList(pub Vec<usize>);

impl FromStr for IntList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = Vec::new();
        for part in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = || format!("bad integer list item `{part}`");
            match part.split_once('-') {
                Some((a, b)) => {
                    let a: usize = a.trim().parse().map_err(|_| bad())?;
                    let b: usize = b.trim().parse().map_err(|_| bad())?;
                    if a > b {
                        return Err(bad());
                    }
                    v.extend(a..=b);
                }
                None => v.push(part.parse().map_err(|_| bad())?),
            }
        }
        if v.is_empty() {
            return Err("empty integer list".into());
        }
        v.sort_unstable();
        v.dedup();
        Ok(IntList(v))
    }
}

impl fmt::Display for IntList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join(&self.0, ","))
    }
}

/// `alpha1:alpha2`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Couple(pub InfluenceabilityPair);

impl FromStr for Couple {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected alpha1:alpha2, got `{s}`"))?;
        let a: f64 = a.trim().parse().map_err(|_| format!("bad alpha1 in `{s}`"))?;
        let b: f64 = b.trim().parse().map_err(|_| format!("bad alpha2 in `{s}`"))?;
        Ok(Couple(InfluenceabilityPair::new(a, b)))
    }
}

impl fmt::Display for Couple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.0.alpha1, self.0.alpha2)
    }
}

/// Mixture components `weight:alpha1:alpha2`, comma-separated.
#[derive(Debug, Clone, PartialEq)]
pub struct Components(pub Vec<(f64, InfluenceabilityPair)>);

impl Components {
    pub fn model(&self, spread: f64) -> MixtureModel {
        let total: f64 = self.0.iter().map(|c| c.0).sum();
        MixtureModel::isotropic(
            self.0.iter().map(|c| c.0 / total).collect(),
            self.0.iter().map(|c| c.1).collect(),
            spread,
        )
    }
}

impl FromStr for Components {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = Vec::new();
        for part in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = || format!("expected weight:alpha1:alpha2, got `{part}`");
            let fields: Vec<f64> = part
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            let [w, a1, a2] = fields[..] else {
                return Err(bad());
            };
            if !(w > 0.0 && w.is_finite()) {
                return Err(format!("component weight must be positive in `{part}`"));
            }
            v.push((w, InfluenceabilityPair::new(a1, a2)));
        }
        if v.is_empty() {
            return Err("no mixture components".into());
        }
        Ok(Components(v))
    }
}

impl fmt::Display for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(w, c)| format!("{w}:{}:{}", c.alpha1, c.alpha2))
            .collect();
        f.write_str(&parts.join(","))
    }
}
