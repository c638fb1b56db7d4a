//! COLMAP text model (`cameras.txt`, `images.txt`, `points3D.txt`) plus an
//! `images/` folder.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::dataset::{Dataset, ScenePoint};
use crate::camera::{CameraView, Intrinsics};
use crate::error::{Error, Result};
use crate::image::Image;

pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera rotation (w, x, y, z).
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    /// (x, y, point3D id or -1).
    pub points2d: Vec<(f64, f64, i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub id: u64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
}

/// Non-comment lines with their 1-based line numbers. Blank lines are kept
/// because `images.txt` uses them for images without observations.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(tok: Option<&str>, what: &str, path: &Path, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} `{tok}`")))
}

pub fn parse_cameras(text: &str, path: &Path) -> Result<HashMap<u32, ColmapCamera>> {
    let mut out = HashMap::new();
    for (ln, line) in data_lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut t = line.split_whitespace();
        let id: u32 = field(t.next(), "camera id", path, ln)?;
        let model = t.next().ok_or_else(|| Error::parse(path, ln, "missing camera model"))?;
        let width: u32 = field(t.next(), "width", path, ln)?;
        let height: u32 = field(t.next(), "height", path, ln)?;
        let params: Vec<f64> = t.map(|p| field(Some(p), "camera parameter", path, ln)).collect::<Result<_>>()?;
        let need = match model {
            "PINHOLE" => 4,
            "SIMPLE_PINHOLE" => 3,
            other => return Err(Error::UnsupportedCameraModel(other.to_owned())),
        };
        if params.len() != need {
            return Err(Error::parse(path, ln, format!("{model} needs {need} parameters, got {}", params.len())));
        }
        let intrinsics = if need == 4 {
            Intrinsics { fx: params[0], fy: params[1], cx: params[2], cy: params[3] }
        } else {
            Intrinsics { fx: params[0], fy: params[0], cx: params[1], cy: params[2] }
        };
        if out.insert(id, ColmapCamera { id, width, height, intrinsics }).is_some() {
            return Err(Error::parse(path, ln, format!("duplicate camera id {id}")));
        }
    }
    Ok(out)
}

pub fn parse_images(text: &str, path: &Path) -> Result<Vec<ColmapImage>> {
    let lines: Vec<(usize, &str)> = data_lines(text).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (ln, line) = lines[i];
        if line.is_empty() {
            i += 1;
            continue;
        }
        let mut t = line.split_whitespace();
        let id = field(t.next(), "image id", path, ln)?;
        let mut q = [0.0; 4];
        for (k, v) in q.iter_mut().enumerate() {
            *v = field(t.next(), ["QW", "QX", "QY", "QZ"][k], path, ln)?;
        }
        let mut tv = [0.0; 3];
        for (k, v) in tv.iter_mut().enumerate() {
            *v = field(t.next(), ["TX", "TY", "TZ"][k], path, ln)?;
        }
        let camera_id = field(t.next(), "camera id", path, ln)?;
        let name: String = t.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(Error::parse(path, ln, "missing image name"));
        }
        let mut points2d = Vec::new();
        if let Some(&(pln, pl)) = lines.get(i + 1) {
            let toks: Vec<&str> = pl.split_whitespace().collect();
            if toks.len() % 3 != 0 {
                return Err(Error::parse(path, pln, "2D points must come in (x, y, id) triples"));
            }
            for c in toks.chunks(3) {
                points2d.push((
                    field(Some(c[0]), "x", path, pln)?,
                    field(Some(c[1]), "y", path, pln)?,
                    field(Some(c[2]), "point id", path, pln)?,
                ));
            }
        }
        out.push(ColmapImage { id, qvec: q, tvec: tv, camera_id, name, points2d });
        i += 2;
    }
    Ok(out)
}

pub fn parse_points(text: &str, path: &Path) -> Result<Vec<ColmapPoint>> {
    let mut out = Vec::new();
    for (ln, line) in data_lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut t = line.split_whitespace();
        let id = field(t.next(), "point id", path, ln)?;
        let xyz = [
            field(t.next(), "X", path, ln)?,
            field(t.next(), "Y", path, ln)?,
            field(t.next(), "Z", path, ln)?,
        ];
        let rgb = [
            field(t.next(), "R", path, ln)?,
            field(t.next(), "G", path, ln)?,
            field(t.next(), "B", path, ln)?,
        ];
        out.push(ColmapPoint { id, xyz, rgb });
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_views(cameras: &HashMap<u32, ColmapCamera>, images: &[ColmapImage]) -> Result<Vec<CameraView>> {
    images
        .iter()
        .map(|im| {
            let cam = cameras
                .get(&im.camera_id)
                .ok_or_else(|| Error::Camera(format!("image `{}` references unknown camera {}", im.name, im.camera_id)))?;
            CameraView::from_quaternion(im.name.clone(), cam.intrinsics, im.qvec, im.tvec, cam.width, cam.height)
        })
        .collect()
}

/// Camera poses only, from `images.txt` and the `cameras.txt` next to it.
pub fn load_views(images_txt: &Path) -> Result<Vec<CameraView>> {
    let cam_path = images_txt.with_file_name("cameras.txt");
    let cameras = parse_cameras(&read(&cam_path)?, &cam_path)?;
    let images = parse_images(&read(images_txt)?, images_txt)?;
    to_views(&cameras, &images)
}

/// Loads a COLMAP text model and its images.
pub fn load_colmap(dir: &Path) -> Result<Dataset> {
    let cam_path = dir.join("cameras.txt");
    let img_path = dir.join("images.txt");
    let pts_path = dir.join("points3D.txt");
    let cameras = parse_cameras(&read(&cam_path)?, &cam_path)?;
    let images = parse_images(&read(&img_path)?, &img_path)?;
    let points = parse_points(&read(&pts_path)?, &pts_path)?;
    if points.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no points", pts_path.display())));
    }
    let views = to_views(&cameras, &images)?;
    let pixels: Vec<Image> = images
        .par_iter()
        .map(|im| Image::load_png(&dir.join(IMAGES_DIR).join(&im.name)))
        .collect::<Result<_>>()?;
    let points = points
        .into_iter()
        .map(|p| ScenePoint {
            position: Vector3::from(p.xyz),
            color: p.rgb.map(|c| c as f64 / 255.0),
        })
        .collect();
    Dataset::new(views, pixels, points)
}

/// Writes views as one PINHOLE camera each, the images as PNG and the
/// initial points.
pub fn write_colmap(dataset: &Dataset, dir: &Path) -> Result<()> {
    let img_dir = dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let mut imgs = String::from("# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for (i, v) in dataset.views.iter().enumerate() {
        let k = &v.intrinsics;
        let id = i + 1;
        writeln!(cams, "{id} PINHOLE {} {} {:?} {:?} {:?} {:?}", v.width, v.height, k.fx, k.fy, k.cx, k.cy).unwrap();
        let q = v.qvec();
        let t = &v.translation;
        writeln!(
            imgs,
            "{id} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {id} {}\n",
            q[0], q[1], q[2], q[3], t.x, t.y, t.z, v.name
        )
        .unwrap();
    }
    let mut pts = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for (i, p) in dataset.points.iter().enumerate() {
        let c = p.color.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        writeln!(
            pts,
            "{} {:?} {:?} {:?} {} {} {} 0",
            i + 1,
            p.position.x,
            p.position.y,
            p.position.z,
            c[0],
            c[1],
            c[2]
        )
        .unwrap();
    }
    for (name, text) in [("cameras.txt", cams), ("images.txt", imgs), ("points3D.txt", pts)] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    dataset
        .views
        .par_iter()
        .zip(&dataset.images)
        .try_for_each(|(v, img)| img.save_png(&img_dir.join(&v.name)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_observation_lines() {
        let text = "# c\n1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 1 2 3 1 b c.png\n10.5 20.5 7 1 2 -1\n";
        let imgs = parse_images(text, Path::new("images.txt")).unwrap();
        assert_eq!(imgs.len(), 2);
        assert!(imgs[0].points2d.is_empty());
        assert_eq!(imgs[1].name, "b c.png");
        assert_eq!(imgs[1].points2d, vec![(10.5, 20.5, 7), (1.0, 2.0, -1)]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_points("# h\n1 0 0 zero 1 2 3 0\n", Path::new("p.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_cameras("1 PINHOLE 10 10 1 2 3\n", Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_cameras("1 SIMPLE_RADIAL 10 10 1 2 3 0.1\n", Path::new("c.txt")).unwrap_err();
        assert!(err.to_string().contains("SIMPLE_RADIAL"));
    }

    #[test]
    fn simple_pinhole_shares_focal() {
        let c = parse_cameras("3 SIMPLE_PINHOLE 64 48 50 32 24\n", Path::new("c.txt")).unwrap();
        assert_eq!(c[&3].intrinsics, Intrinsics { fx: 50.0, fy: 50.0, cx: 32.0, cy: 24.0 });
    }
}
