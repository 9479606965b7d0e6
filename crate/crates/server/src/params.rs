//! Query-string parsing for the API. Unknown keys and malformed values are
//! rejected instead of silently defaulted.

use pathquant_core::{PostprocessParams, Resolution};

use crate::error::ApiError;

/// Optional post-processing overrides accepted by both endpoints.
pub const POSTPROCESS_KEYS: [&str; 4] = ["seg_threshold", "size_gate_min", "size_gate_max", "marker_threshold"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferParams {
    pub resolution: Resolution,
    pub pil: bool,
    pub slim: bool,
    pub params: PostprocessParams,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdjustParams {
    pub result_id: Option<String>,
    /// Only needed to place the overlay exactly; otherwise the scale is
    /// inferred from the two image widths.
    pub resolution: Option<Resolution>,
    pub params: PostprocessParams,
}

pub fn parse_infer(query: &[(String, String)]) -> Result<InferParams, ApiError> {
    let mut out = InferParams::default();
    for (k, v) in query {
        match k.as_str() {
            "resolution" => out.resolution = parse_resolution(v)?,
            "pil" => out.pil = parse_flag(k, v)?,
            "slim" => out.slim = parse_flag(k, v)?,
            _ if POSTPROCESS_KEYS.contains(&k.as_str()) => apply_postprocess(&mut out.params, k, v)?,
            _ => return Err(unknown(k)),
        }
    }
    validate(&out.params)?;
    Ok(out)
}

pub fn parse_adjust(query: &[(String, String)]) -> Result<AdjustParams, ApiError> {
    let mut out = AdjustParams::default();
    for (k, v) in query {
        match k.as_str() {
            "result_id" => out.result_id = Some(v.clone()),
            "resolution" => out.resolution = Some(parse_resolution(v)?),
            _ if POSTPROCESS_KEYS.contains(&k.as_str()) => apply_postprocess(&mut out.params, k, v)?,
            _ => return Err(unknown(k)),
        }
    }
    validate(&out.params)?;
    Ok(out)
}

/// Serializes parameters back into query pairs, the inverse of the parsers.
pub fn postprocess_query(p: &PostprocessParams) -> Vec<(&'static str, String)> {
    let mut q = vec![
        ("seg_threshold", p.seg_threshold.to_string()),
        ("size_gate_min", p.size_gate_min.to_string()),
        ("marker_threshold", p.marker_threshold.to_string()),
    ];
    if let Some(max) = p.size_gate_max {
        q.push(("size_gate_max", max.to_string()));
    }
    q
}

pub fn validate(p: &PostprocessParams) -> Result<(), ApiError> {
    p.validate().map_err(|e| ApiError::bad_parameter(e.to_string()))
}

pub fn parse_resolution(v: &str) -> Result<Resolution, ApiError> {
    v.parse().map_err(|e: pathquant_core::engine::ParseResolutionError| ApiError::bad_parameter(e.to_string()))
}

fn unknown(k: &str) -> ApiError {
    ApiError::bad_parameter(format!("unknown parameter {k:?}"))
}

/// A bare `?slim` counts as true.
fn parse_flag(k: &str, v: &str) -> Result<bool, ApiError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "" | "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ApiError::bad_parameter(format!("{k} must be a boolean, got {v:?}"))),
    }
}

fn apply_postprocess(p: &mut PostprocessParams, k: &str, v: &str) -> Result<(), ApiError> {
    let number = || {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| !x.is_nan())
            .ok_or_else(|| ApiError::bad_parameter(format!("{k} must be a number, got {v:?}")))
    };
    match k {
        "seg_threshold" => p.seg_threshold = number()?,
        "size_gate_min" => p.size_gate_min = number()?,
        "marker_threshold" => p.marker_threshold = number()?,
        "size_gate_max" => {
            p.size_gate_max = match v.trim() {
                "" | "none" => None,
                _ => Some(number()?),
            }
        }
        _ => unreachable!("caller checks POSTPROCESS_KEYS"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn infer_defaults_and_overrides() {
        assert_eq!(parse_infer(&[]).unwrap(), InferParams::default());
        let p = parse_infer(&q(&[("resolution", "40x"), ("slim", ""), ("pil", "false"), ("size_gate_max", "500")]))
            .unwrap();
        assert_eq!(p.resolution, Resolution::X40);
        assert!(p.slim && !p.pil);
        assert_eq!(p.params.size_gate_max, Some(500.0));
    }

    #[test]
    fn rejects_instead_of_defaulting() {
        for bad in [
            q(&[("resolution", "bogus")]),
            q(&[("resolution", "")]),
            q(&[("slim", "maybe")]),
            q(&[("seg_threshold", "1.5")]),
            q(&[("seg_threshold", "NaN")]),
            q(&[("size_gate_min", "50"), ("size_gate_max", "10")]),
            q(&[("colour", "red")]),
        ] {
            let e = parse_infer(&bad).unwrap_err();
            assert_eq!(e.code, "bad_parameter", "{bad:?}");
        }
    }

    #[test]
    fn adjust_round_trips_params() {
        let params = PostprocessParams {
            seg_threshold: 0.3,
            size_gate_min: 7.5,
            size_gate_max: Some(90.0),
            marker_threshold: 0.6,
        };
        let pairs: Vec<_> = postprocess_query(&params).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let back = parse_adjust(&pairs).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.result_id, None);
        assert!(parse_adjust(&q(&[("slim", "1")])).is_err());
    }
}
