//! PAGE XML ground truth: `TextLine/Coords@points` polygons.
//!
//! Element matching is by local name, so any PAGE namespace revision (or none) is accepted.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PAGE_NS: &str = "http://schema.primaresearch.org/PAGE/gts/pagecontent/2019-07-15";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineGroundTruth {
    pub line_id: String,
    /// Vertices as (x, y) pixel coordinates.
    pub polygon: Vec<(i64, i64)>,
    pub region_id: Option<String>,
}

pub fn parse_page_xml(path: impl AsRef<Path>) -> Result<Vec<LineGroundTruth>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_page_xml_str(&text).map_err(|message| Error::PageXml {
        path: path.to_path_buf(),
        message,
    })
}

/// Parse PAGE XML text. Errors carry a `line:column` location.
pub fn parse_page_xml_str(text: &str) -> std::result::Result<Vec<LineGroundTruth>, String> {
    let doc = roxmltree::Document::parse(text).map_err(|e| format!("malformed XML: {e}"))?;
    let mut lines = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name_local("TextLine")) {
        let pos = doc.text_pos_at(node.range().start);
        let line_id = node
            .attribute("id")
            .map(str::to_owned)
            .unwrap_or_else(|| format!("line@{}:{}", pos.row, pos.col));
        let coords = node
            .children()
            .find(|c| c.has_tag_name_local("Coords"))
            .ok_or_else(|| format!("TextLine '{line_id}' at {}:{} has no Coords", pos.row, pos.col))?;
        let cpos = doc.text_pos_at(coords.range().start);
        let polygon = match coords.attribute("points") {
            Some(points) => parse_points(points)
                .map_err(|tok| format!("TextLine '{line_id}' at {}:{}: bad point '{tok}'", cpos.row, cpos.col))?,
            None => legacy_points(coords)
                .map_err(|tok| format!("TextLine '{line_id}' at {}:{}: bad point '{tok}'", cpos.row, cpos.col))?,
        };
        if polygon.len() < 3 {
            return Err(format!(
                "TextLine '{line_id}' at {}:{}: polygon has {} vertices, need at least 3",
                cpos.row,
                cpos.col,
                polygon.len()
            ));
        }
        let region_id = node
            .ancestors()
            .skip(1)
            .find(|a| a.has_tag_name_local("TextRegion"))
            .and_then(|r| r.attribute("id"))
            .map(str::to_owned);
        lines.push(LineGroundTruth {
            line_id,
            polygon,
            region_id,
        });
    }
    Ok(lines)
}

trait LocalName {
    fn has_tag_name_local(&self, name: &str) -> bool;
}

impl LocalName for roxmltree::Node<'_, '_> {
    fn has_tag_name_local(&self, name: &str) -> bool {
        self.is_element() && self.tag_name().name() == name
    }
}

fn parse_points(points: &str) -> std::result::Result<Vec<(i64, i64)>, String> {
    points
        .split_whitespace()
        .map(|tok| {
            let (x, y) = tok.split_once(',').ok_or_else(|| tok.to_owned())?;
            let x = x.trim().parse::<i64>().map_err(|_| tok.to_owned())?;
            let y = y.trim().parse::<i64>().map_err(|_| tok.to_owned())?;
            Ok((x, y))
        })
        .collect()
}

// 2010-era files list <Point x= y=/> children instead of a points attribute
fn legacy_points(coords: roxmltree::Node) -> std::result::Result<Vec<(i64, i64)>, String> {
    coords
        .children()
        .filter(|c| c.has_tag_name_local("Point"))
        .map(|p| {
            let get = |k| {
                p.attribute(k)
                    .ok_or_else(|| format!("Point missing {k}"))
                    .and_then(|v| v.trim().parse::<i64>().map_err(|_| v.to_owned()))
            };
            Ok((get("x")?, get("y")?))
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Serialize lines as a PAGE document. Lines sharing a `region_id` are grouped
/// into one TextRegion; lines without one go into a default region.
pub fn write_page_xml(lines: &[LineGroundTruth], image_filename: &str, height: usize, width: usize) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<PcGts xmlns=\"{PAGE_NS}\">");
    out.push_str("  <Metadata><Creator>lineweave</Creator></Metadata>\n");
    let _ = writeln!(
        out,
        "  <Page imageFilename=\"{}\" imageWidth=\"{width}\" imageHeight=\"{height}\">",
        escape(image_filename)
    );
    // group consecutive lines by region, preserving document order
    let mut i = 0;
    let mut anon = 0;
    while i < lines.len() {
        let region = lines[i].region_id.clone();
        let mut j = i;
        while j < lines.len() && lines[j].region_id == region {
            j += 1;
        }
        let rid = match &region {
            Some(r) => escape(r),
            None => {
                anon += 1;
                format!("lw_region_{anon}")
            }
        };
        let _ = writeln!(out, "    <TextRegion id=\"{rid}\">");
        for line in &lines[i..j] {
            let pts: Vec<String> = line.polygon.iter().map(|(x, y)| format!("{x},{y}")).collect();
            let _ = writeln!(out, "      <TextLine id=\"{}\">", escape(&line.line_id));
            let _ = writeln!(out, "        <Coords points=\"{}\"/>", pts.join(" "));
            out.push_str("      </TextLine>\n");
        }
        out.push_str("    </TextRegion>\n");
        i = j;
    }
    out.push_str("  </Page>\n</PcGts>\n");
    out
}
