//! Point-cloud files: whitespace text (`.xyz`), CSV, ASCII PLY vertex lists
//! and PGM images.
//!
//! Text formats carry one point per line with an optional trailing weight
//! column. In xyz files the weight column is recognized only when a
//! `# dim: d` comment fixes the coordinate count; CSV and PLY name it `w`.
//! Images become 2-D clouds, one point per pixel at or above the threshold.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{normalize, DiscreteMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudFormat {
    Xyz,
    Csv,
    Ply,
    Pgm,
}

impl CloudFormat {
    /// Format implied by a file extension (`xyz`/`txt`, `csv`, `ply`, `pgm`).
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("xyz") | Some("txt") => Ok(CloudFormat::Xyz),
            Some("csv") => Ok(CloudFormat::Csv),
            Some("ply") => Ok(CloudFormat::Ply),
            Some("pgm") => Ok(CloudFormat::Pgm),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer cloud format of {}",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::Xyz => "xyz",
            CloudFormat::Csv => "csv",
            CloudFormat::Ply => "ply",
            CloudFormat::Pgm => "pgm",
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" | "xyz_text" | "txt" => Ok(CloudFormat::Xyz),
            "csv" => Ok(CloudFormat::Csv),
            "ply" | "ply_ascii_points" => Ok(CloudFormat::Ply),
            "pgm" | "pgm_image" => Ok(CloudFormat::Pgm),
            _ => Err(Error::InvalidArgument(format!("unknown cloud format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadOptions {
    /// Gray level at or above which a pixel is lit.
    pub threshold: u16,
    /// Center and scale into the unit ball after parsing.
    pub normalize: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            threshold: 128,
            normalize: true,
        }
    }
}

fn parse_error(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    let value: f64 = token
        .parse()
        .map_err(|_| parse_error(format!("line {line}"), format!("'{token}' is not a number")))?;
    if !value.is_finite() {
        return Err(parse_error(
            format!("line {line}"),
            format!("non-finite value '{token}'"),
        ));
    }
    Ok(value)
}

/// Rows of coordinates plus optional masses, assembled into a measure.
fn assemble(rows: Vec<Vec<f64>>, dim: usize, masses: Option<Vec<f64>>, source: &str) -> Result<DiscreteMeasure> {
    if rows.is_empty() {
        return Err(Error::EmptyCloud(source.to_string()));
    }
    let n = rows.len();
    let support = Array2::from_shape_vec((n, dim), rows.into_iter().flatten().collect())
        .map_err(|e| parse_error(source, e.to_string()))?;
    match masses {
        Some(m) => DiscreteMeasure::from_masses(support, Array1::from(m)),
        None => DiscreteMeasure::uniform(support),
    }
}

/// Parses xyz text without normalizing.
pub fn parse_xyz(text: &str, source: &str) -> Result<DiscreteMeasure> {
    let mut declared: Option<usize> = None;
    let mut dim: Option<usize> = None;
    let mut rows = Vec::new();
    let mut masses = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("dim:") {
                let d: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_error(format!("line {line_no}"), "bad dim header"))?;
                if d == 0 {
                    return Err(parse_error(format!("line {line_no}"), "dimension must be positive"));
                }
                declared = Some(d);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| parse_number(t, line_no))
            .collect::<Result<Vec<_>>>()?;
        let width = *dim.get_or_insert(values.len());
        if values.len() != width {
            return Err(parse_error(
                format!("line {line_no}"),
                format!("expected {width} columns, found {}", values.len()),
            ));
        }
        match declared {
            Some(d) if width == d + 1 => {
                masses.push(values[d]);
                rows.push(values[..d].to_vec());
            }
            Some(d) if width != d => {
                return Err(parse_error(
                    format!("line {line_no}"),
                    format!("{width} columns for dimension {d}"),
                ));
            }
            _ => rows.push(values),
        }
    }
    let d = declared.or(dim).unwrap_or(0);
    let masses = (!masses.is_empty()).then_some(masses);
    assemble(rows, d, masses, source)
}

/// Parses CSV with a header row naming the columns; a column named `w` or
/// `weight` holds masses, every other column is a coordinate.
pub fn parse_csv(text: &str, source: &str) -> Result<DiscreteMeasure> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::EmptyCloud(source.to_string()))?;
    let names: Vec<String> = header.split(',').map(|h| h.trim().to_ascii_lowercase()).collect();
    if names.iter().any(|n| n.parse::<f64>().is_ok()) {
        return Err(parse_error("line 1", "missing header row (expected x,y[,z][,w])"));
    }
    let weight_col = names.iter().position(|n| n == "w" || n == "weight");
    let dim = names.len() - usize::from(weight_col.is_some());
    if dim == 0 {
        return Err(parse_error("line 1", "no coordinate columns"));
    }
    let mut rows = Vec::new();
    let mut masses = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let values = line
            .split(',')
            .map(|t| parse_number(t.trim(), line_no))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != names.len() {
            return Err(parse_error(
                format!("line {line_no}"),
                format!("expected {} fields, found {}", names.len(), values.len()),
            ));
        }
        let mut coords = Vec::with_capacity(dim);
        for (c, v) in values.into_iter().enumerate() {
            if Some(c) == weight_col {
                masses.push(v);
            } else {
                coords.push(v);
            }
        }
        rows.push(coords);
    }
    assemble(rows, dim, weight_col.map(|_| masses), source)
}

/// Parses the vertex element of an ASCII PLY file. Coordinates come from
/// the `x`, `y`, `z` properties present; `w` or `weight` holds masses.
/// Other elements are ignored.
pub fn parse_ply(text: &str, source: &str) -> Result<DiscreteMeasure> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_error("line 1", "missing 'ply' magic")),
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut before_vertex = 0usize;
    let mut props: Vec<String> = Vec::new();
    let mut header_end = None;
    for (idx, raw) in lines.by_ref() {
        let line_no = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_error(
                        format!("line {line_no}"),
                        format!("unsupported PLY format '{fmt}'"),
                    ));
                }
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| parse_error(format!("line {line_no}"), "bad element count"))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(count);
                } else if vertex_count.is_none() {
                    before_vertex += count;
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(parse_error(
                        format!("line {line_no}"),
                        "list properties on vertices are unsupported",
                    ));
                }
            }
            ["property", _, name] => {
                if in_vertex {
                    props.push(name.to_ascii_lowercase());
                }
            }
            ["end_header"] => {
                header_end = Some(line_no);
                break;
            }
            _ => {}
        }
    }
    let header_end = header_end.ok_or_else(|| parse_error(source, "missing end_header"))?;
    let count = vertex_count.ok_or_else(|| parse_error(format!("line {header_end}"), "no vertex element"))?;
    let coord_cols: Vec<usize> = ["x", "y", "z"]
        .iter()
        .filter_map(|axis| props.iter().position(|p| p == axis))
        .collect();
    if coord_cols.is_empty() {
        return Err(parse_error(
            format!("line {header_end}"),
            "vertex element has no x/y/z properties",
        ));
    }
    let weight_col = props.iter().position(|p| p == "w" || p == "weight");
    let mut rows = Vec::with_capacity(count);
    let mut masses = Vec::new();
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty()).skip(before_vertex);
    for _ in 0..count {
        let (idx, line) = body
            .next()
            .ok_or_else(|| parse_error(source, format!("expected {count} vertices, file ended early")))?;
        let line_no = idx + 1;
        let values = line
            .split_whitespace()
            .map(|t| parse_number(t, line_no))
            .collect::<Result<Vec<_>>>()?;
        if values.len() < props.len() {
            return Err(parse_error(
                format!("line {line_no}"),
                format!("expected {} properties, found {}", props.len(), values.len()),
            ));
        }
        rows.push(coord_cols.iter().map(|&c| values[c]).collect());
        if let Some(w) = weight_col {
            masses.push(values[w]);
        }
    }
    assemble(rows, coord_cols.len(), weight_col.map(|_| masses), source)
}

struct PgmReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmReader<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_error(format!("byte {start}"), "unexpected end of file"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| parse_error(format!("byte {start}"), "non-ASCII header"))
    }

    fn number(&mut self) -> Result<usize> {
        let at = self.pos;
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| parse_error(format!("byte {at}"), format!("'{tok}' is not an integer")))
    }
}

/// Gray levels of a P2 or P5 image, row-major, with its width and height.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut r = PgmReader { bytes, pos: 0 };
    let magic = r.token()?.to_string();
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(parse_error("byte 0", format!("unsupported magic '{other}'"))),
    };
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_error(
            format!("byte {}", r.pos),
            format!("maxval {maxval} out of range"),
        ));
    }
    let count = width * height;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = r.pos + 1;
        let wide = maxval > 255;
        let needed = count * if wide { 2 } else { 1 };
        if bytes.len() < start + needed {
            return Err(parse_error(
                format!("byte {}", bytes.len()),
                format!("raster needs {needed} bytes"),
            ));
        }
        let raster = &bytes[start..start + needed];
        if wide {
            pixels.extend(raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])));
        } else {
            pixels.extend(raster.iter().map(|&b| u16::from(b)));
        }
    } else {
        for _ in 0..count {
            let at = r.pos;
            let v = r.number()?;
            if v > maxval {
                return Err(parse_error(
                    format!("byte {at}"),
                    format!("gray level {v} exceeds maxval {maxval}"),
                ));
            }
            pixels.push(v as u16);
        }
    }
    Ok((width, height, pixels))
}

/// One 2-D point per pixel with gray level ≥ `threshold`, at the pixel
/// center with y pointing up.
pub fn image_to_cloud(
    width: usize,
    height: usize,
    pixels: &[u16],
    threshold: u16,
    source: &str,
) -> Result<DiscreteMeasure> {
    let mut rows = Vec::new();
    for row in 0..height {
        for col in 0..width {
            if pixels[row * width + col] >= threshold {
                rows.push(vec![col as f64 + 0.5, (height - 1 - row) as f64 + 0.5]);
            }
        }
    }
    assemble(rows, 2, None, source)
}

/// Reads a cloud, normalizing it unless `opts.normalize` is off.
pub fn read_cloud_with(path: &Path, format: CloudFormat, opts: &ReadOptions) -> Result<DiscreteMeasure> {
    let source = path.display().to_string();
    let raw = if format == CloudFormat::Pgm {
        let bytes = fs::read(path)?;
        let (w, h, pixels) = parse_pgm(&bytes)?;
        let cloud = image_to_cloud(w, h, &pixels, opts.threshold, &source)?;
        if opts.normalize {
            // a single lit pixel has no scale
            return normalize(&cloud).map_err(|e| match e {
                Error::DegenerateSupport => Error::EmptyCloud(source.clone()),
                other => other,
            });
        }
        return Ok(cloud);
    } else {
        let text = fs::read_to_string(path)?;
        match format {
            CloudFormat::Xyz => parse_xyz(&text, &source)?,
            CloudFormat::Csv => parse_csv(&text, &source)?,
            CloudFormat::Ply => parse_ply(&text, &source)?,
            CloudFormat::Pgm => unreachable!(),
        }
    };
    if opts.normalize {
        normalize(&raw)
    } else {
        Ok(raw)
    }
}

/// Reads and normalizes a cloud, inferring the format from the extension.
pub fn read_cloud(path: &Path) -> Result<DiscreteMeasure> {
    read_cloud_with(path, CloudFormat::from_path(path)?, &ReadOptions::default())
}

fn weight_column(measure: &DiscreteMeasure) -> bool {
    !measure.is_uniform(0.0)
}

/// Text of `measure` in a writable format. Coordinates use the shortest
/// representation that parses back to the same `f64`.
pub fn format_cloud(measure: &DiscreteMeasure, format: CloudFormat) -> Result<String> {
    let d = measure.dim();
    let with_w = weight_column(measure);
    let mut out = String::new();
    let axes = ["x", "y", "z"];
    match format {
        CloudFormat::Xyz => {
            let _ = writeln!(out, "# dim: {d}");
        }
        CloudFormat::Csv => {
            let mut names: Vec<String> = (0..d)
                .map(|c| axes.get(c).map_or(format!("x{c}"), |a| a.to_string()))
                .collect();
            if with_w {
                names.push("w".into());
            }
            let _ = writeln!(out, "{}", names.join(","));
        }
        CloudFormat::Ply => {
            if d > 3 {
                return Err(Error::InvalidArgument(format!(
                    "PLY holds at most 3 coordinates, cloud has {d}"
                )));
            }
            let _ = writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", measure.len());
            for axis in &axes[..d] {
                let _ = writeln!(out, "property double {axis}");
            }
            if with_w {
                let _ = writeln!(out, "property double w");
            }
            let _ = writeln!(out, "end_header");
        }
        CloudFormat::Pgm => return Err(Error::InvalidArgument("clouds cannot be written as PGM".into())),
    }
    let sep = if format == CloudFormat::Csv { "," } else { " " };
    for (row, w) in measure.support().rows().into_iter().zip(measure.weights().iter()) {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if with_w {
            fields.push(format!("{w:?}"));
        }
        let _ = writeln!(out, "{}", fields.join(sep));
    }
    Ok(out)
}

pub fn write_cloud(path: &Path, measure: &DiscreteMeasure, format: CloudFormat) -> Result<()> {
    fs::write(path, format_cloud(measure, format)?)?;
    Ok(())
}

/// A cloud file found under a class subdirectory.
#[derive(Debug, Clone)]
pub struct LabeledCloud {
    pub class: String,
    pub path: PathBuf,
    pub measure: DiscreteMeasure,
}

/// Reads every recognized cloud file in the immediate subdirectories of
/// `root`, labeling each by its subdirectory name. Classes and files are
/// visited in lexicographic order.
pub fn read_labeled_dir(root: &Path, opts: &ReadOptions) -> Result<Vec<LabeledCloud>> {
    let mut classes: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    let mut out = Vec::new();
    for dir in classes {
        let class = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && CloudFormat::from_path(p).is_ok())
            .collect();
        files.sort();
        for path in files {
            let measure = read_cloud_with(&path, CloudFormat::from_path(&path)?, opts)?;
            out.push(LabeledCloud {
                class: class.clone(),
                path,
                measure,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCloud(root.display().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn file(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn xyz_two_points() {
        let dir = tempfile::tempdir().unwrap();
        let m = read_cloud(&file(&dir, "a.xyz", b"0 0\n2 0\n")).unwrap();
        assert_eq!(m.support(), array![[-1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(m.weights(), array![0.5, 0.5]);
    }

    #[test]
    fn pgm_examples() {
        let dir = tempfile::tempdir().unwrap();
        let one = file(&dir, "one.pgm", b"P2\n2 2\n255\n0 200\n0 0\n");
        assert!(matches!(read_cloud(&one), Err(Error::EmptyCloud(_))));

        let pair = file(&dir, "pair.pgm", b"P5\n2 1\n255\n\xff\x80");
        let m = read_cloud(&pair).unwrap();
        assert_eq!(m.support(), array![[-1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(m.weights(), array![0.5, 0.5]);

        let raw = ReadOptions {
            threshold: 128,
            normalize: false,
        };
        let m = read_cloud_with(
            &file(&dir, "l.pgm", b"P2 # c\n2 2 255\n255 0\n5 5\n"),
            CloudFormat::Pgm,
            &raw,
        )
        .unwrap();
        // top-left pixel sits on the upper row
        assert_eq!(m.support(), array![[0.5, 1.5]]);
        let high = ReadOptions { threshold: 5, ..raw };
        assert_eq!(
            read_cloud_with(&dir.path().join("l.pgm"), CloudFormat::Pgm, &high)
                .unwrap()
                .len(),
            3
        );
    }

    #[test]
    fn weight_columns_are_renormalized() {
        let m = parse_csv("x,y,w\n0,0,1\n1,0,3\n", "t").unwrap();
        assert_eq!(m.weights(), array![0.25, 0.75]);
        let m = parse_xyz("# dim: 2\n0 0 2\n1 0 2\n", "t").unwrap();
        assert_eq!(m.weights(), array![0.5, 0.5]);
        assert_eq!(parse_xyz("0 0 2\n1 0 2\n", "t").unwrap().dim(), 3);
        let ply = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float w\n\
                   element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 1\n2 0 3\n3 0 1 1\n";
        let m = parse_ply(ply, "t").unwrap();
        assert_eq!(m.support(), array![[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(m.weights(), array![0.25, 0.75]);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_xyz("0 0\n1 x\n", "t").unwrap_err();
        assert_eq!(e, parse_error("line 2", "'x' is not a number"));
        assert!(matches!(parse_xyz("0 0\n1 0 0\n", "t"), Err(Error::Parse { location, .. }) if location == "line 2"));
        assert!(matches!(parse_xyz("# nothing\n", "t"), Err(Error::EmptyCloud(_))));
        assert!(matches!(parse_csv("0,0\n1,1\n", "t"), Err(Error::Parse { .. })));
        assert!(matches!(parse_pgm(b"P5\n4 4\n255\n\x00"), Err(Error::Parse { .. })));
        let binary = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(matches!(parse_ply(binary, "t"), Err(Error::Parse { location, .. }) if location == "line 2"));
    }

    #[test]
    fn write_then_read_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = DiscreteMeasure::new(array![[0.1, -0.7, 1.0 / 3.0], [1e-17, 0.25, -0.3]], array![0.3, 0.7]).unwrap();
        for format in [CloudFormat::Xyz, CloudFormat::Csv, CloudFormat::Ply] {
            let p = dir.path().join(format!("c.{}", format.extension()));
            write_cloud(&p, &m, format).unwrap();
            let back = read_cloud_with(
                &p,
                format,
                &ReadOptions {
                    normalize: false,
                    ..ReadOptions::default()
                },
            )
            .unwrap();
            assert_eq!(back, m, "{format:?}");
        }
    }

    #[test]
    fn labeled_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("b")).unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("b/1.xyz"), "0 0\n1 1\n").unwrap();
        fs::write(dir.path().join("a/2.xyz"), "0 0\n1 2\n").unwrap();
        fs::write(dir.path().join("a/notes.md"), "ignored").unwrap();
        let clouds = read_labeled_dir(dir.path(), &ReadOptions::default()).unwrap();
        let classes: Vec<&str> = clouds.iter().map(|c| c.class.as_str()).collect();
        assert_eq!(classes, vec!["a", "b"]);
    }
}
