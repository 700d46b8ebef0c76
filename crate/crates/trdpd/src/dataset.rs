//! Dataset handling: grayscale image loading (PGM/PNG), directory and
//! single-star glob listing, and patch extraction with a manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use trdpd_core::noise::CounterRng;
use trdpd_core::Image;

use crate::error::{format_err, Result};
use crate::pgm::{read_pgm, write_pgm};
use crate::pngio::read_png_gray;

/// Reads a grayscale image by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "pgm" => read_pgm(path),
        Some(ext) if ext == "png" => read_png_gray(path),
        _ => Err(format_err(format!(
            "{}: unsupported image format (use .pgm or .png)",
            path.display()
        ))),
    }
}

fn is_image_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".pgm") || lower.ends_with(".png")
}

/// Lists input images from a directory or a `dir/prefix*suffix` pattern,
/// sorted by file name for reproducibility.
pub fn list_images(spec: &Path) -> Result<Vec<PathBuf>> {
    let spec_str = spec.to_string_lossy();
    let mut out = Vec::new();
    if let Some(star) = spec_str.find('*') {
        let (before, after) = (&spec_str[..star], &spec_str[star + 1..]);
        if after.contains('*') {
            return Err(format_err("only a single `*` is supported in dataset patterns"));
        }
        let (dir, prefix) = match before.rfind('/') {
            Some(i) => (PathBuf::from(&before[..=i]), before[i + 1..].to_string()),
            None => (PathBuf::from("."), before.to_string()),
        };
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_file() && name.starts_with(&prefix) && name.ends_with(after) {
                out.push(entry.path());
            }
        }
    } else if spec.is_dir() {
        for entry in fs::read_dir(spec)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_file() && is_image_name(&name) {
                out.push(entry.path());
            }
        }
    } else if spec.is_file() {
        out.push(spec.to_path_buf());
    } else {
        return Err(format_err(format!("{}: no such file or directory", spec.display())));
    }
    out.sort();
    Ok(out)
}

/// Crops `patch x patch` from the image; `offset` is (x, y).
pub fn crop(image: &Image, offset: (usize, usize), patch: usize) -> Result<Image> {
    let (x0, y0) = offset;
    if x0 + patch > image.width() || y0 + patch > image.height() {
        return Err(format_err("crop exceeds image bounds"));
    }
    let mut data = Vec::with_capacity(patch * patch);
    for y in y0..y0 + patch {
        for x in x0..x0 + patch {
            data.push(image.get(x, y));
        }
    }
    Ok(Image::new(patch, patch, data)?)
}

/// Center-crops to `patch x patch` when the image is larger; identity when
/// it is exactly the patch size.
pub fn center_crop(image: &Image, patch: usize) -> Result<Image> {
    let x0 = (image.width() - patch) / 2;
    let y0 = (image.height() - patch) / 2;
    crop(image, (x0, y0), patch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Centered,
    Random,
}

pub struct IngestOutcome {
    pub patches: usize,
    pub skipped: usize,
    pub manifest: PathBuf,
}

/// Cuts one patch per input image into `out_dir`, writing a manifest that
/// records the crop geometry. Undersized images are skipped with a warning
/// on stderr. Random offsets are drawn per image from `(seed, image index)`
/// so reruns reproduce the manifest bit for bit.
pub fn ingest(
    dataset: &Path,
    out_dir: &Path,
    patch: usize,
    count: Option<usize>,
    mode: CropMode,
    seed: u64,
) -> Result<IngestOutcome> {
    if patch == 0 {
        return Err(format_err("patch size must be positive"));
    }
    let files = list_images(dataset)?;
    if files.is_empty() {
        return Err(format_err(format!("{}: no input images found", dataset.display())));
    }
    fs::create_dir_all(out_dir)?;
    let limit = count.unwrap_or(usize::MAX);

    let mode_name = match mode {
        CropMode::Centered => "centered",
        CropMode::Random => "random",
    };
    let mut manifest = String::new();
    manifest.push_str(&format!("# patch_size={patch} mode={mode_name} seed={seed}\n"));
    manifest.push_str("# patch\tsource\tx\ty\n");

    let mut written = 0usize;
    let mut skipped = 0usize;
    for (idx, file) in files.iter().enumerate() {
        if written >= limit {
            break;
        }
        let image = read_image(file)?;
        if image.width() < patch || image.height() < patch {
            eprintln!(
                "warning: skipping {} ({}x{} is smaller than the {patch}x{patch} patch)",
                file.display(),
                image.width(),
                image.height()
            );
            skipped += 1;
            continue;
        }
        let (x0, y0) = match mode {
            CropMode::Centered => ((image.width() - patch) / 2, (image.height() - patch) / 2),
            CropMode::Random => {
                let mut rng = CounterRng::keyed(seed, idx as u64);
                let xr = image.width() - patch + 1;
                let yr = image.height() - patch + 1;
                (
                    (rng.next_u64() % xr as u64) as usize,
                    (rng.next_u64() % yr as u64) as usize,
                )
            }
        };
        let cut = crop(&image, (x0, y0), patch)?;
        let name = format!("patch_{written:04}.pgm");
        write_pgm(&out_dir.join(&name), &cut)?;
        manifest.push_str(&format!("{name}\t{}\t{x0}\t{y0}\n", file.display()));
        written += 1;
    }

    let manifest_path = out_dir.join("manifest.txt");
    let mut mf = fs::File::create(&manifest_path)?;
    mf.write_all(manifest.as_bytes())?;
    Ok(IngestOutcome { patches: written, skipped, manifest: manifest_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("trdpd_ds_{name}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn gradient_image(w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h).map(|i| (i % 256) as f64).collect()).unwrap()
    }

    #[test]
    fn identity_crop_when_patch_equals_image() {
        let img = gradient_image(12, 12);
        let out = center_crop(&img, 12).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn ingest_writes_patches_and_deterministic_manifest() {
        let src = tmpdir("src");
        let out_a = tmpdir("out_a");
        let out_b = tmpdir("out_b");
        for i in 0..3 {
            write_pgm(&src.join(format!("img_{i}.pgm")), &gradient_image(20 + i, 24)).unwrap();
        }
        // one undersized image is skipped with a warning
        write_pgm(&src.join("small.pgm"), &gradient_image(4, 4)).unwrap();

        let a = ingest(&src, &out_a, 16, None, CropMode::Random, 9).unwrap();
        let b = ingest(&src, &out_b, 16, None, CropMode::Random, 9).unwrap();
        assert_eq!(a.patches, 3);
        assert_eq!(a.skipped, 1);
        let ma = fs::read(&a.manifest).unwrap();
        let mb = fs::read(&b.manifest).unwrap();
        assert_eq!(ma, mb);
        for i in 0..3 {
            let pa = fs::read(out_a.join(format!("patch_{i:04}.pgm"))).unwrap();
            let pb = fs::read(out_b.join(format!("patch_{i:04}.pgm"))).unwrap();
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn glob_listing_filters_by_pattern() {
        let src = tmpdir("glob");
        for name in ["a_1.pgm", "a_2.pgm", "b_1.pgm", "a_3.png"] {
            write_pgm(&src.join(name), &gradient_image(4, 4)).unwrap();
        }
        let pat = src.join("a_*.pgm");
        let found = list_images(&pat).unwrap();
        let names: Vec<String> = found
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["a_1.pgm", "a_2.pgm"]);
    }
}
