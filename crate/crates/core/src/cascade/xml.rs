//! Reader for the "new format" cascade XML written by the open-source
//! cascade training tools (`opencv_storage/cascade`), LBP features only.
//!
//! Each weak classifier is a depth-1 categorical stump stored as
//! `internalNodes = 0 -1 <featureIdx> <mask0> .. <mask7>` plus two
//! `leafValues`. The eight signed mask words are the LUT verbatim.
//!
//! Stage thresholds are lowered by `1e-5` on load, as the reference detector
//! does, so that windows sitting exactly on a threshold get the same verdict.

use roxmltree::{Document, Node};

use super::{CascadeModel, Location, Lut, MbLbpFeature, ParseError, Stage, WeakClassifier};

const THRESHOLD_EPS: f32 = 1e-5;

fn xml_err(path: &str, message: impl Into<String>) -> ParseError {
    ParseError::Xml {
        path: path.to_string(),
        message: message.into(),
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str, path: &str) -> Result<Node<'a, 'i>, ParseError> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .ok_or_else(|| xml_err(path, format!("missing <{name}>")))
}

fn items<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|c| c.has_tag_name("_"))
}

fn text<'a>(node: Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn parse_scalar<T: std::str::FromStr>(node: Node<'_, '_>, path: &str) -> Result<T, ParseError> {
    let t = text(node);
    t.parse().map_err(|_| xml_err(path, format!("cannot parse {t:?}")))
}

fn parse_list<T: std::str::FromStr>(node: Node<'_, '_>, path: &str) -> Result<Vec<T>, ParseError> {
    text(node)
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| xml_err(path, format!("cannot parse {t:?}"))))
        .collect()
}

pub fn parse_standard_xml(input: &str) -> Result<CascadeModel, ParseError> {
    let doc = Document::parse(input).map_err(|e| xml_err("/", e.to_string()))?;
    let root = doc.root_element();
    let root_path = root.tag_name().name().to_string();
    let path = format!("{root_path}/cascade");
    let cascade = child(root, "cascade", &root_path)?;

    let stage_type = text(child(cascade, "stageType", &path)?);
    if stage_type != "BOOST" {
        return Err(xml_err(
            &format!("{path}/stageType"),
            format!("unsupported stage type {stage_type:?}"),
        ));
    }
    let feature_type = text(child(cascade, "featureType", &path)?);
    if feature_type != "LBP" {
        return Err(ParseError::UnsupportedFeature {
            found: feature_type.to_string(),
        });
    }
    let height: u32 = parse_scalar(child(cascade, "height", &path)?, &format!("{path}/height"))?;
    let width: u32 = parse_scalar(child(cascade, "width", &path)?, &format!("{path}/width"))?;

    // maxCatCount defaults to 256 for LBP when the block is absent
    if let Some(fp) = cascade.children().find(|c| c.has_tag_name("featureParams")) {
        if let Some(mc) = fp.children().find(|c| c.has_tag_name("maxCatCount")) {
            let p = format!("{path}/featureParams/maxCatCount");
            let cats: u32 = parse_scalar(mc, &p)?;
            if cats != 256 {
                return Err(xml_err(&p, format!("LBP cascades need 256 categories, found {cats}")));
            }
        }
    }

    let features_path = format!("{path}/features");
    let features = items(child(cascade, "features", &path)?)
        .enumerate()
        .map(|(i, f)| {
            let p = format!("{features_path}/_[{i}]/rect");
            let r: Vec<i64> = parse_list(child(f, "rect", &p)?, &p)?;
            match r[..] {
                [x, y, w, h] if x >= 0 && y >= 0 && w >= 1 && h >= 1 => {
                    Ok(MbLbpFeature::new(x as u32, y as u32, w as u32, h as u32))
                }
                _ => Err(xml_err(&p, format!("expected x y w h, found {r:?}"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let stages_path = format!("{path}/stages");
    let stage_nodes: Vec<_> = items(child(cascade, "stages", &path)?).collect();
    if let Some(n) = cascade.children().find(|c| c.has_tag_name("stageNum")) {
        let declared: usize = parse_scalar(n, &format!("{path}/stageNum"))?;
        if declared != stage_nodes.len() {
            return Err(xml_err(
                &format!("{path}/stageNum"),
                format!("declares {declared} stages, found {}", stage_nodes.len()),
            ));
        }
    }

    let mut stages = Vec::with_capacity(stage_nodes.len());
    for (si, sn) in stage_nodes.into_iter().enumerate() {
        let sp = format!("{stages_path}/_[{si}]");
        let threshold: f64 = parse_scalar(child(sn, "stageThreshold", &sp)?, &format!("{sp}/stageThreshold"))?;
        let wp = format!("{sp}/weakClassifiers");
        let mut weak = Vec::new();
        for (wi, wn) in items(child(sn, "weakClassifiers", &sp)?).enumerate() {
            let np = format!("{wp}/_[{wi}]/internalNodes");
            let nodes: Vec<i64> = parse_list(child(wn, "internalNodes", &np)?, &np)?;
            if nodes.len() != 11 {
                return Err(xml_err(
                    &np,
                    format!(
                        "expected a single stump with 8 mask words (11 integers), found {}",
                        nodes.len()
                    ),
                ));
            }
            if nodes[0] != 0 || nodes[1] != -1 {
                return Err(xml_err(&np, "only depth-1 stumps are supported"));
            }
            let idx = nodes[2];
            let feature = usize::try_from(idx)
                .ok()
                .and_then(|i| features.get(i).copied())
                .ok_or_else(|| xml_err(&np, format!("feature index {idx} out of range")))?;
            let mut words = [0u32; 8];
            for (k, w) in words.iter_mut().enumerate() {
                let v = nodes[3 + k];
                *w = i32::try_from(v)
                    .map(|v| v as u32)
                    .or_else(|_| u32::try_from(v))
                    .map_err(|_| xml_err(&np, format!("mask word {v} is not 32-bit")))?;
            }
            let lp = format!("{wp}/_[{wi}]/leafValues");
            let leaves: Vec<f64> = parse_list(child(wn, "leafValues", &lp)?, &lp)?;
            if leaves.len() != 2 {
                return Err(xml_err(&lp, format!("expected 2 leaf values, found {}", leaves.len())));
            }
            if !feature.fits(width, height) {
                return Err(ParseError::FeatureOutOfWindow {
                    stage: si,
                    weak: wi,
                    feature,
                    at: Location::Element(np),
                });
            }
            weak.push(WeakClassifier {
                feature,
                lut: Lut::from_words(words),
                left: leaves[0] as f32,
                right: leaves[1] as f32,
            });
        }
        let stage = Stage::new(weak, threshold as f32 - THRESHOLD_EPS).ok_or(ParseError::EmptyStage {
            stage: si,
            at: Location::Element(wp),
        })?;
        stages.push(stage);
    }
    CascadeModel::new(width, height, stages)
}
