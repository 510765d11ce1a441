//! C ABI over `histlayer`.
//!
//! Every fallible call returns an [`HlStatus`]. On failure the message is
//! available from [`hl_last_error_message`] on the same thread until the next
//! failing call. Handles are opaque and must be released with their `_free`
//! function. Panics never cross the boundary; they surface as
//! `HL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use histlayer::hist::{Binning, HistogramConfig, HistogramLayer, InitScheme};
use histlayer::model::{Model, ModelSpec, ModelVariant};
use histlayer::synth::{self, DatasetManifest, SyntheticSample};
use histlayer::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    BufferTooSmall = 4,
    Io = 5,
    Malformed = 6,
    Panic = 7,
}

/// Values accepted in [`HlHistConfig::binning`].
#[repr(C)]
pub enum HlBinning {
    Rbf = 0,
    PiecewiseLinear = 1,
}

/// Values accepted in [`HlHistConfig::init`].
#[repr(C)]
pub enum HlInit {
    EquispacedOnRange = 0,
    UniformSymmetric = 1,
}

/// Values accepted by [`hl_model_new`].
#[repr(C)]
pub enum HlVariant {
    ConvOnly = 0,
    HistOnly = 1,
    Combination = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlHistConfig {
    pub bins: u32,
    pub channels: u32,
    pub window_h: u32,
    pub window_w: u32,
    pub stride_h: u32,
    pub stride_w: u32,
    /// An `HlBinning` value.
    pub binning: u32,
    pub normalize_count: bool,
    pub sum_to_one: bool,
    /// Input channels of a learnable 1x1 reduction to `channels`; 0 for none.
    pub reduce_from: u32,
    /// An `HlInit` value.
    pub init: u32,
    pub init_lo: f64,
    pub init_hi: f64,
}

pub struct HlHistLayer {
    inner: HistogramLayer,
}

pub struct HlDataset {
    samples: Vec<SyntheticSample>,
    manifest: DatasetManifest,
}

pub struct HlModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => HlStatus::ShapeMismatch,
            Error::Io { .. } => HlStatus::Io,
            Error::Malformed { .. } | Error::Json(_) | Error::Csv(_) => HlStatus::Malformed,
            _ => HlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: HlStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            HlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(HlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(HlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(HlStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(HlStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn copy_out(dst: &mut [f64], src: &[f64], what: &str) -> Result<(), Failure> {
    if dst.len() < src.len() {
        return fail(
            HlStatus::BufferTooSmall,
            format!("{what} needs {} values, buffer holds {}", src.len(), dst.len()),
        );
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

unsafe fn read_shape(shape: *const usize) -> Result<[usize; 4], Failure> {
    let s = slice(shape, 4, "shape")?;
    Ok([s[0], s[1], s[2], s[3]])
}

unsafe fn read_tensor(shape: *const usize, data: *const f64) -> Result<Tensor, Failure> {
    let shape = read_shape(shape)?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Failure(HlStatus::InvalidArgument, "shape overflows".into()))?;
    let values = slice(data, len, "input")?;
    Ok(Tensor::new(shape, values.to_vec())?)
}

fn to_config(c: &HlHistConfig) -> Result<HistogramConfig, Failure> {
    let binning = match c.binning {
        0 => Binning::Rbf,
        1 => Binning::PiecewiseLinear,
        v => return fail(HlStatus::InvalidArgument, format!("unknown binning {v}")),
    };
    let init = match c.init {
        0 => InitScheme::EquispacedOnRange {
            lo: c.init_lo,
            hi: c.init_hi,
        },
        1 => InitScheme::UniformSymmetric,
        v => return fail(HlStatus::InvalidArgument, format!("unknown init scheme {v}")),
    };
    Ok(HistogramConfig {
        bins: c.bins as usize,
        channels: c.channels as usize,
        window: (c.window_h as usize, c.window_w as usize),
        stride: (c.stride_h as usize, c.stride_w as usize),
        binning,
        normalize_count: c.normalize_count,
        sum_to_one: c.sum_to_one,
        reduce_from: (c.reduce_from > 0).then_some(c.reduce_from as usize),
        init,
    })
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn hl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a histogram layer with parameters from the config's init scheme.
///
/// # Safety
/// `config` must point to a valid `HlHistConfig`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_new(
    config: *const HlHistConfig,
    seed: u64,
    out: *mut *mut HlHistLayer,
) -> HlStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = to_config(deref(config, "config")?)?;
        let inner = HistogramLayer::new(cfg, seed)?;
        *out = Box::into_raw(Box::new(HlHistLayer { inner }));
        Ok(())
    })
}

/// # Safety
/// `layer` must come from [`hl_hist_layer_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_free(layer: *mut HlHistLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Number of centers (equal to the number of widths), `bins * channels`.
///
/// # Safety
/// `layer` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_bin_params(layer: *const HlHistLayer, out: *mut usize) -> HlStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        *deref_mut(out, "out")? = layer.inner.params.centers().len();
        Ok(())
    })
}

/// Total learnable parameters, including any reduction convolution.
///
/// # Safety
/// `layer` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_param_count(layer: *const HlHistLayer, out: *mut usize) -> HlStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        *deref_mut(out, "out")? = layer.inner.param_count();
        Ok(())
    })
}

/// Copies centers and widths (row-major `(bins, channels)`) into the buffers.
///
/// # Safety
/// Both buffers must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_get_params(
    layer: *const HlHistLayer,
    centers: *mut f64,
    widths: *mut f64,
    len: usize,
) -> HlStatus {
    guard(|| {
        let p = &deref(layer, "layer")?.inner.params;
        copy_out(slice_mut(centers, len, "centers")?, p.centers(), "centers")?;
        copy_out(slice_mut(widths, len, "widths")?, p.widths(), "widths")
    })
}

/// Replaces centers and widths; `len` must equal `bins * channels`.
///
/// # Safety
/// Both buffers must hold `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_set_params(
    layer: *mut HlHistLayer,
    centers: *const f64,
    widths: *const f64,
    len: usize,
) -> HlStatus {
    guard(|| {
        let layer = deref_mut(layer, "layer")?;
        let c = slice(centers, len, "centers")?;
        let w = slice(widths, len, "widths")?;
        let p = &mut layer.inner.params;
        if len != p.centers().len() {
            return fail(
                HlStatus::ShapeMismatch,
                format!("layer has {} bin parameters, got {len}", p.centers().len()),
            );
        }
        if c.iter().chain(w).any(|v| !v.is_finite()) {
            return fail(HlStatus::InvalidArgument, "parameters must be finite");
        }
        let (pc, pw) = p.centers_and_widths_mut();
        pc.copy_from_slice(c);
        pw.copy_from_slice(w);
        Ok(())
    })
}

/// Output shape `(N, B*K, R, C)` for an input of shape `in_shape`.
///
/// # Safety
/// `in_shape` must hold 4 readable values and `out_shape` 4 writable ones.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_output_shape(
    layer: *const HlHistLayer,
    in_shape: *const usize,
    out_shape: *mut usize,
) -> HlStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let [n, c, h, w] = read_shape(in_shape)?;
        let cfg = &layer.inner.config;
        if c != cfg.input_channels() {
            return fail(
                HlStatus::ShapeMismatch,
                format!("layer expects {} input channels, got {c}", cfg.input_channels()),
            );
        }
        let (rows, cols) = cfg.output_dims(h, w)?;
        slice_mut(out_shape, 4, "out_shape")?.copy_from_slice(&[n, cfg.output_channels(), rows, cols]);
        Ok(())
    })
}

/// Forward pass of an `(N, C, H, W)` input into `out` (`out_len` doubles).
///
/// # Safety
/// `shape` holds 4 values, `x` the product of them, `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_forward(
    layer: *const HlHistLayer,
    shape: *const usize,
    x: *const f64,
    out: *mut f64,
    out_len: usize,
) -> HlStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let x = read_tensor(shape, x)?;
        let (y, _) = layer.inner.forward(&x)?;
        copy_out(slice_mut(out, out_len, "out")?, y.data(), "output")
    })
}

/// Same result as [`hl_hist_layer_forward`] through the composed-primitive
/// path (RBF only).
///
/// # Safety
/// As for [`hl_hist_layer_forward`].
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_forward_composed(
    layer: *const HlHistLayer,
    shape: *const usize,
    x: *const f64,
    out: *mut f64,
    out_len: usize,
) -> HlStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let x = read_tensor(shape, x)?;
        let y = layer.inner.forward_composed(&x)?;
        copy_out(slice_mut(out, out_len, "out")?, y.data(), "output")
    })
}

/// Gradients of `sum(upstream * forward(x))`. `grad_centers` and
/// `grad_widths` hold `params_len` doubles; `grad_input` may be null,
/// otherwise it holds `input_len` doubles.
///
/// # Safety
/// All non-null buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_backward(
    layer: *const HlHistLayer,
    shape: *const usize,
    x: *const f64,
    upstream: *const f64,
    upstream_len: usize,
    grad_centers: *mut f64,
    grad_widths: *mut f64,
    params_len: usize,
    grad_input: *mut f64,
    input_len: usize,
) -> HlStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let x = read_tensor(shape, x)?;
        let (y, cache) = layer.inner.forward(&x)?;
        if upstream_len != y.len() {
            return fail(
                HlStatus::ShapeMismatch,
                format!("upstream needs {} values, got {upstream_len}", y.len()),
            );
        }
        let up = Tensor::new(y.shape(), slice(upstream, upstream_len, "upstream")?.to_vec())?;
        let g = layer.inner.backward(&cache, &up)?;
        copy_out(slice_mut(grad_centers, params_len, "grad_centers")?, &g.centers, "grad_centers")?;
        copy_out(slice_mut(grad_widths, params_len, "grad_widths")?, &g.widths, "grad_widths")?;
        if !grad_input.is_null() {
            copy_out(slice_mut(grad_input, input_len, "grad_input")?, g.input.data(), "grad_input")?;
        }
        Ok(())
    })
}

/// Bin parameters as JSON `{bins, channels, centers, widths}`. Free the
/// string with [`hl_string_free`].
///
/// # Safety
/// `layer` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_hist_layer_params_json(layer: *const HlHistLayer, out: *mut *mut c_char) -> HlStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let json = deref(layer, "layer")?.inner.params.to_json()?;
        *out = CString::new(json)
            .map_err(|e| Failure(HlStatus::Malformed, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Generates the 900-image synthetic dataset with `size x size` images.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_generate(size: u32, seed: u64, out: *mut *mut HlDataset) -> HlStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let (samples, manifest) = synth::generate_dataset(size as usize, seed)?;
        *out = Box::into_raw(Box::new(HlDataset { samples, manifest }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`hl_dataset_generate`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_free(ds: *mut HlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_len(ds: *const HlDataset, out: *mut usize) -> HlStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        *deref_mut(out, "out")? = ds.samples.len();
        Ok(())
    })
}

/// Copies image `index` into `pixels` (`len` bytes, at least `size * size`)
/// and writes its joint class and split (0 train, 1 val, 2 test).
///
/// # Safety
/// `pixels` must hold `len` writable bytes; `class_out` and `split_out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_image(
    ds: *const HlDataset,
    index: usize,
    pixels: *mut u8,
    len: usize,
    class_out: *mut u32,
    split_out: *mut u32,
) -> HlStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let Some(s) = ds.samples.get(index) else {
            return fail(
                HlStatus::InvalidArgument,
                format!("index {index} out of range for {} images", ds.samples.len()),
            );
        };
        let dst = slice_mut(pixels, len, "pixels")?;
        if dst.len() < s.pixels.len() {
            return fail(
                HlStatus::BufferTooSmall,
                format!("image needs {} bytes, buffer holds {len}", s.pixels.len()),
            );
        }
        dst[..s.pixels.len()].copy_from_slice(&s.pixels);
        *deref_mut(class_out, "class_out")? = s.joint_class as u32;
        *deref_mut(split_out, "split_out")? = s.split.index() as u32;
        Ok(())
    })
}

/// Writes PGM images and the CSV manifest under `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_write(ds: *const HlDataset, dir: *const c_char) -> HlStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if dir.is_null() {
            return fail(HlStatus::NullPointer, "dir is null");
        }
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|e| Failure(HlStatus::InvalidArgument, format!("dir is not UTF-8: {e}")))?;
        synth::write_dataset(&ds.samples, &ds.manifest, Path::new(dir))?;
        Ok(())
    })
}

/// Builds one of the synthetic architectures (an `HlVariant` value).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_new(variant: u32, num_classes: u32, seed: u64, out: *mut *mut HlModel) -> HlStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let variant = match variant {
            0 => ModelVariant::ConvOnly,
            1 => ModelVariant::HistOnly,
            2 => ModelVariant::Combination,
            v => return fail(HlStatus::InvalidArgument, format!("unknown variant {v}")),
        };
        let inner = Model::build(ModelSpec::synthetic(variant, num_classes as usize), seed)?;
        *out = Box::into_raw(Box::new(HlModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hl_model_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hl_model_free(model: *mut HlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_param_count(model: *const HlModel, out: *mut usize) -> HlStatus {
    guard(|| {
        let model = deref(model, "model")?;
        *deref_mut(out, "out")? = model.inner.param_count();
        Ok(())
    })
}

/// Logits `(N, classes)` for an `(N, 1, H, W)` batch.
///
/// # Safety
/// `shape` holds 4 values, `x` the product of them, `logits` `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_model_forward(
    model: *const HlModel,
    shape: *const usize,
    x: *const f64,
    logits: *mut f64,
    len: usize,
) -> HlStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let x = read_tensor(shape, x)?;
        let (y, _) = model.inner.forward(&x)?;
        copy_out(slice_mut(logits, len, "logits")?, y.data(), "logits")
    })
}
