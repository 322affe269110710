//! Alarm uptime of detector hardware chains modeled as series systems.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redundancy {
    #[default]
    Simplex,
    /// Two units in parallel; either keeps the element up.
    Duplex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainElement {
    pub kind: String,
    pub count: usize,
    /// Per-unit availability in (0, 1]; zero is accepted to model a dead unit.
    pub availability: f64,
    #[serde(default)]
    pub redundancy: Redundancy,
}

impl ChainElement {
    pub fn new(kind: &str, count: usize, availability: f64) -> Self {
        ChainElement {
            kind: kind.into(),
            count,
            availability,
            redundancy: Redundancy::Simplex,
        }
    }

    /// Availability of one position in the chain.
    pub fn unit_availability(&self) -> f64 {
        match self.redundancy {
            Redundancy::Simplex => self.availability,
            Redundancy::Duplex => 1.0 - (1.0 - self.availability).powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentChain {
    pub name: String,
    pub elements: Vec<ChainElement>,
}

impl ComponentChain {
    pub fn validate(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Err(Error::config(
                format!("availability.{}", self.name),
                "chain has no elements",
            ));
        }
        for e in &self.elements {
            let path = format!("availability.{}.{}", self.name, e.kind);
            if e.count == 0 {
                return Err(Error::config(path, "count must be >= 1"));
            }
            if !(e.availability >= 0.0 && e.availability <= 1.0) {
                return Err(Error::config(path, "availability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.elements.iter().map(|e| e.count).sum()
    }

    fn preset(name: &str, parts: &[(&str, usize)], a: f64) -> Self {
        ComponentChain {
            name: name.into(),
            elements: parts.iter().map(|&(k, n)| ChainElement::new(k, n, a)).collect(),
        }
    }

    /// Flow-imbalance alarm between two stations (11 elements).
    pub fn mass_flow(a: f64) -> Self {
        Self::preset(
            "mass_flow",
            &[
                ("flowmeter", 2),
                ("pressure_sensor", 2),
                ("temperature_sensor", 2),
                ("rtu", 2),
                ("comms_link", 2),
                ("computer", 1),
            ],
            a,
        )
    }

    /// Pressure-imbalance alarm across three stations (13 elements).
    pub fn pressure(a: f64) -> Self {
        Self::preset(
            "pressure",
            &[("pressure_sensor", 4), ("rtu", 4), ("comms_link", 4), ("computer", 1)],
            a,
        )
    }

    /// Acoustic alarm between two stations (7 elements).
    pub fn acoustic(a: f64) -> Self {
        Self::preset(
            "acoustic",
            &[("acoustic_monitor", 2), ("rtu", 2), ("comms_link", 2), ("computer", 1)],
            a,
        )
    }

    pub fn presets(a: f64) -> Vec<Self> {
        vec![Self::mass_flow(a), Self::pressure(a), Self::acoustic(a)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainAvailability {
    pub name: String,
    pub elements: usize,
    /// Exact series product.
    pub product: f64,
    /// One minus the summed unavailabilities.
    pub approximate: f64,
    /// False when the approximation went negative.
    pub approximate_valid: bool,
}

pub fn chain_availability(chain: &ComponentChain) -> Result<ChainAvailability> {
    chain.validate()?;
    let mut product = 1.0;
    let mut downtime = 0.0;
    for e in &chain.elements {
        let u = e.unit_availability();
        product *= u.powi(e.count as i32);
        downtime += e.count as f64 * (1.0 - u);
    }
    let approximate = 1.0 - downtime;
    Ok(ChainAvailability {
        name: chain.name.clone(),
        elements: chain.element_count(),
        product,
        approximate,
        approximate_valid: approximate >= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Upgrade {
    pub kind: String,
    /// Gain in product-mode availability from duplexing this element.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChain {
    pub rank: usize,
    pub availability: ChainAvailability,
    /// Sorted by decreasing gain.
    pub upgrades: Vec<Upgrade>,
}

/// Ranks chains by product-mode availability, best first; ties go to the
/// chain with fewer elements.
pub fn compare_configurations(chains: &[ComponentChain]) -> Result<Vec<RankedChain>> {
    let mut ranked = Vec::with_capacity(chains.len());
    for chain in chains {
        let base = chain_availability(chain)?;
        let mut upgrades = Vec::new();
        for (i, e) in chain.elements.iter().enumerate() {
            if e.redundancy == Redundancy::Duplex {
                continue;
            }
            let mut up = chain.clone();
            up.elements[i].redundancy = Redundancy::Duplex;
            upgrades.push(Upgrade {
                kind: e.kind.clone(),
                delta: chain_availability(&up)?.product - base.product,
            });
        }
        upgrades.sort_by(|a, b| b.delta.total_cmp(&a.delta));
        ranked.push(RankedChain {
            rank: 0,
            availability: base,
            upgrades,
        });
    }
    ranked.sort_by(|a, b| {
        b.availability
            .product
            .total_cmp(&a.availability.product)
            .then(a.availability.elements.cmp(&b.availability.elements))
    });
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(ranked)
}

/// Writes the ranking as CSV.
pub fn write_csv<W: Write>(out: &mut W, ranking: &[RankedChain]) -> std::io::Result<()> {
    writeln!(
        out,
        "rank,chain,elements,product,approximate,approximate_valid,best_upgrade,best_upgrade_gain"
    )?;
    for r in ranking {
        let a = &r.availability;
        let (kind, gain) = r
            .upgrades
            .first()
            .map(|u| (u.kind.as_str(), format!("{:.12}", u.delta)))
            .unwrap_or(("", String::new()));
        writeln!(
            out,
            "{},{},{},{:.12},{:.12},{},{},{}",
            r.rank, a.name, a.elements, a.product, a.approximate, a.approximate_valid, kind, gain
        )?;
    }
    Ok(())
}
