//! Per-stage debug images, named `<frame>_<stage>.png`.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma, Rgb, RgbImage};

use super::FrameAnalysis;
use crate::error::{Error, Result};
use crate::image::{save_png, MaskImage, Plane};
use crate::regions::{kde_pdf, region_samples};
use crate::texture::SegmentationMap;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

fn gray(plane: &Plane) -> DynamicImage {
    let (w, h) = plane.dims();
    DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(plane.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    }))
}

fn mask(m: &MaskImage) -> DynamicImage {
    DynamicImage::ImageLuma8(m.to_luma8())
}

fn labels(map: &SegmentationMap) -> DynamicImage {
    let (w, h) = map.dims();
    DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(PALETTE[map.get(x as usize, y as usize) % PALETTE.len()])
    }))
}

fn mean3(planes: &[Plane; 3]) -> Plane {
    let (w, h) = planes[0].dims();
    Plane::from_fn(w, h, |x, y| (planes[0].get(x, y) + planes[1].get(x, y) + planes[2].get(x, y)) / 3.0)
}

pub(crate) fn write_stages(dir: &Path, a: &FrameAnalysis) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let f = a.result.frame_index;
    let save = |stage: &str, img: DynamicImage| save_png(&img, &dir.join(format!("{f:06}_{stage}.png")));
    let Some(hf) = &a.hf else { return Ok(()) };
    save("s_dog", gray(&mean3(&hf.s_dog)))?;
    save("e_dog", gray(&hf.entropy))?;
    save("m_dog", mask(&hf.mask))?;
    if let Some(ic) = &a.intensity {
        save("m_heq1", mask(&ic.m_heq1))?;
        save("m_heq2", mask(&ic.m_heq2))?;
    }
    if let Some(m_cd) = &a.m_cd {
        save("m_cd", mask(m_cd))?;
    }
    if let Some((raw, smooth)) = &a.segmentation {
        save("r_t", labels(raw))?;
        save("r_smooth", labels(smooth))?;
    }
    if let Some(r) = &a.regions {
        save("i_adj", DynamicImage::ImageRgb8(r.adjusted.to_rgb8()))?;
        save("s_t", gray(&r.subtraction))?;
        let mut overlay = r.adjusted.to_rgb8();
        for (i, region) in r.kept.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()];
            for &p in &region.pixels {
                let (x, y) = ((p % overlay.width() as usize) as u32, (p / overlay.width() as usize) as u32);
                let o = overlay.get_pixel(x, y).0;
                overlay.put_pixel(x, y, Rgb([0, 1, 2].map(|k| ((o[k] as u16 + c[k] as u16) / 2) as u8)));
            }
        }
        save("r_filter", DynamicImage::ImageRgb8(overlay))?;
        save("m_t", mask(&r.mask))?;
        for (i, region) in r.shadow_candidates.iter().enumerate() {
            let pdf = kde_pdf(&region_samples(region, &r.subtraction), a.kde_bandwidth, a.kde_grid)?;
            let mut text = String::from("x,density\n");
            for (x, p) in pdf.grid.iter().zip(&pdf.density) {
                text.push_str(&format!("{x},{p}\n"));
            }
            let path = dir.join(format!("{f:06}_kde_{i:03}.csv"));
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
