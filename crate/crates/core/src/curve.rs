//! Per-layer score curves and the joined CSV tables built from them.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered `(layer_id, score)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<(String, f64)>,
}

/// A computed curve plus notes for the human-readable log.
#[derive(Debug, Clone)]
pub struct CurveRun {
    pub curve: Curve,
    pub log: Vec<String>,
}

impl Curve {
    pub fn new(points: Vec<(String, f64)>) -> Self {
        Self { points }
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = &str> {
        self.points.iter().map(|(l, _)| l.as_str())
    }

    pub fn get(&self, layer_id: &str) -> Option<f64> {
        self.points.iter().find(|(l, _)| l == layer_id).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer_id,score\n");
        for (l, v) in &self.points {
            s.push_str(&format!("{l},{v}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "layer_id,score" => {}
            _ => return Err(Error::parse(origin, 1, "expected header 'layer_id,score'")),
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (l, v) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected two columns"))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, i + 1, format!("bad score {v:?}")))?;
            points.push((l.trim().to_string(), v));
        }
        Ok(Self { points })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}

/// Merge several layer orderings into one. Layers keep their relative order
/// within each list; a layer first seen in a later list is placed right after
/// its predecessor in that list.
pub fn merge_layer_order<'a, I>(orders: I) -> Vec<String>
where
    I: IntoIterator<Item = Vec<&'a str>>,
{
    let mut merged: Vec<String> = Vec::new();
    for order in orders {
        let mut cursor: Option<usize> = None;
        for id in order {
            match merged.iter().position(|m| m == id) {
                Some(p) => cursor = Some(p),
                None => {
                    let at = cursor.map_or(0, |c| c + 1);
                    merged.insert(at, id.to_string());
                    cursor = Some(at);
                }
            }
        }
    }
    merged
}

/// CSV with header `layer_id,<model>...`; cells for layers a model lacks are empty.
pub fn join_curves(models: &[(String, Curve)]) -> String {
    let order = merge_layer_order(models.iter().map(|(_, c)| c.layer_ids().collect()));
    let mut s = String::from("layer_id");
    for (name, _) in models {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for id in &order {
        s.push_str(id);
        for (_, c) in models {
            s.push(',');
            if let Some(v) = c.get(id) {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}
