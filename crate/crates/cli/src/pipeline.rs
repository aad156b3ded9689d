//! Image-to-image fusion with a trained network.

use irfusion_core::model::{pad_to_multiple, FusionNet, PadRecord};
use irfusion_core::trainer::{denormalize, normalize};
use irfusion_core::{Error, Result, Tensor};

/// Padded, normalized 32-bit network inputs and the original size.
pub fn prepare(net: &FusionNet, vis: &Tensor, ir: &Tensor) -> Result<(Tensor<f32>, Tensor<f32>, PadRecord)> {
    let (sv, si) = (vis.shape(), ir.shape());
    if (sv.h(), sv.w()) != (si.h(), si.w()) {
        return Err(Error::Shape(format!(
            "visible image is {}x{} but infrared is {}x{}",
            sv.w(),
            sv.h(),
            si.w(),
            si.h()
        )));
    }
    let m = net.config().divisor();
    let (v, record) = pad_to_multiple(&normalize(vis).cast::<f32>(), m);
    let (i, _) = pad_to_multiple(&normalize(ir).cast::<f32>(), m);
    Ok((v, i, record))
}

/// Fuses a `1×3×H×W` visible and `1×1×H×W` infrared image in `[0, 1]` into a
/// `1×3×H×W` image in `[0, 1]`, for any `H` and `W`.
pub fn fuse(net: &FusionNet, vis: &Tensor, ir: &Tensor) -> Result<Tensor> {
    let (v, i, record) = prepare(net, vis, ir)?;
    let out = record.crop(&net.forward_as(&v, &i)?)?;
    Ok(denormalize(&out).cast::<f64>())
}

/// 8-bit pixel values, as written to disk.
pub fn quantize(img: &Tensor) -> Vec<u8> {
    img.data().iter().map(|&v| crate::image_io::to_u8(v)).collect()
}
