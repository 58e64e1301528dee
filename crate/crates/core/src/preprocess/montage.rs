//! Scalp-region resolution for 10-10 montage labels.
//!
//! Labels map to regions by their longest matching prefix; ambiguous or
//! non-standard labels must be assigned explicitly through an override
//! table.

use std::collections::HashMap;

use crate::data_io::EEGEpochSet;
use crate::{Error, Result};

use super::ablate_electrodes;

/// Scalp region of an electrode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Frontal,
    Central,
    Temporal,
    Parietal,
    Occipital,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Frontal,
        Region::Central,
        Region::Temporal,
        Region::Parietal,
        Region::Occipital,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Region::Frontal => "frontal",
            Region::Central => "central",
            Region::Temporal => "temporal",
            Region::Parietal => "parietal",
            Region::Occipital => "occipital",
        }
    }

    pub fn parse(s: &str) -> Result<Region> {
        Region::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Mapping(format!("unknown region '{s}'")))
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Label prefixes of the 10-10 scheme. Longest match wins, so "PO7" is
/// occipital while "P7" is parietal.
const PREFIXES: [(&str, Region); 12] = [
    ("Fp", Region::Frontal),
    ("AF", Region::Frontal),
    ("FC", Region::Central),
    ("CP", Region::Central),
    ("FT", Region::Temporal),
    ("TP", Region::Temporal),
    ("PO", Region::Occipital),
    ("F", Region::Frontal),
    ("C", Region::Central),
    ("T", Region::Temporal),
    ("P", Region::Parietal),
    ("O", Region::Occipital),
];

fn try_region(label: &str, overrides: &HashMap<String, Region>) -> Option<Region> {
    if let Some(r) = overrides.get(label) {
        return Some(*r);
    }
    PREFIXES
        .iter()
        .filter(|(p, _)| label.starts_with(p))
        .max_by_key(|(p, _)| p.len())
        .map(|(_, r)| *r)
}

/// Resolves one channel label to its scalp region.
pub fn region_of(label: &str, overrides: &HashMap<String, Region>) -> Result<Region> {
    try_region(label, overrides)
        .ok_or_else(|| Error::Mapping(format!("channel '{label}' matches no region prefix")))
}

/// Indices of all channels belonging to `region`.
///
/// The whole montage must resolve, so typos surface even when they fall in
/// other regions; every unmatched name is listed in the error.
pub fn electrodes_in_region(
    channel_names: &[String],
    region: Region,
    overrides: &HashMap<String, Region>,
) -> Result<Vec<usize>> {
    let mut unmatched = Vec::new();
    let mut hits = Vec::new();
    for (i, name) in channel_names.iter().enumerate() {
        match try_region(name, overrides) {
            Some(r) if r == region => hits.push(i),
            Some(_) => {}
            None => unmatched.push(name.as_str()),
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::Mapping(format!(
            "channels match no region prefix: {}",
            unmatched.join(", ")
        )));
    }
    Ok(hits)
}

/// Zeroes every channel of the given scalp region.
pub fn ablate_region(
    x: &EEGEpochSet,
    region: Region,
    overrides: &HashMap<String, Region>,
) -> Result<EEGEpochSet> {
    let channels = electrodes_in_region(&x.channel_names, region, overrides)?;
    ablate_electrodes(x, &channels)
}

/// Parses a JSON object {channel_label: region_name} into an override table.
pub fn parse_region_overrides(json: &str) -> Result<HashMap<String, Region>> {
    let raw: HashMap<String, String> = serde_json::from_str(json)
        .map_err(|e| Error::Format(format!("region override table: {e}")))?;
    let mut out = HashMap::with_capacity(raw.len());
    for (label, region) in raw {
        out.insert(label, Region::parse(&region)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_overrides() -> HashMap<String, Region> {
        HashMap::new()
    }

    #[test]
    fn longest_prefix_wins() {
        let ov = no_overrides();
        assert_eq!(region_of("Fp1", &ov).unwrap(), Region::Frontal);
        assert_eq!(region_of("F3", &ov).unwrap(), Region::Frontal);
        assert_eq!(region_of("FC5", &ov).unwrap(), Region::Central);
        assert_eq!(region_of("Cz", &ov).unwrap(), Region::Central);
        assert_eq!(region_of("CP1", &ov).unwrap(), Region::Central);
        assert_eq!(region_of("T7", &ov).unwrap(), Region::Temporal);
        assert_eq!(region_of("TP9", &ov).unwrap(), Region::Temporal);
        assert_eq!(region_of("P7", &ov).unwrap(), Region::Parietal);
        assert_eq!(region_of("PO7", &ov).unwrap(), Region::Occipital);
        assert_eq!(region_of("Oz", &ov).unwrap(), Region::Occipital);
    }

    #[test]
    fn occipital_covers_o_and_po() {
        let names: Vec<String> = ["O1", "Oz", "O2", "PO7", "PO3", "Pz", "Fp1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let idx = electrodes_in_region(&names, Region::Occipital, &no_overrides()).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_labels_are_listed() {
        let names: Vec<String> = ["Cz", "EXG1", "Status"].iter().map(|s| s.to_string()).collect();
        let err = electrodes_in_region(&names, Region::Central, &no_overrides()).unwrap_err();
        match err {
            Error::Mapping(msg) => {
                assert!(msg.contains("EXG1"), "{msg}");
                assert!(msg.contains("Status"), "{msg}");
            }
            other => panic!("expected mapping error, got {other}"),
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let ov = parse_region_overrides(r#"{"EXG1": "temporal", "Pz": "occipital"}"#).unwrap();
        assert_eq!(region_of("EXG1", &ov).unwrap(), Region::Temporal);
        assert_eq!(region_of("Pz", &ov).unwrap(), Region::Occipital);
        assert!(parse_region_overrides(r#"{"EXG1": "nowhere"}"#).is_err());
    }
}
