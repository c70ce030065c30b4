//! Convolution kernels (im2col + GEMM) and their adjoints.

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Hyperparameters of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    /// Stride-1 convolution whose output keeps the input's spatial size.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
    ) -> Self {
        Self {
            padding: dilation * (kernel_size - 1) / 2,
            dilation,
            ..Self::new(in_channels, out_channels, kernel_size)
        }
    }

    pub fn with_stride(self, stride: usize) -> Self {
        Self { stride, ..self }
    }

    pub fn with_padding(self, padding: usize) -> Self {
        Self { padding, ..self }
    }

    pub fn with_dilation(self, dilation: usize) -> Self {
        Self { dilation, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_size == 0
            || self.stride == 0
            || self.dilation == 0
        {
            return Err(Error::InvalidConv(format!(
                "channels, kernel, stride and dilation must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn span(&self) -> usize {
        self.dilation * (self.kernel_size - 1) + 1
    }

    /// `floor((in + 2p - d(k-1) - 1) / s) + 1`, rejected when below 1.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        self.validate()?;
        let padded = input + 2 * self.padding;
        if padded < self.span() {
            return Err(Error::InvalidConv(format!(
                "input extent {input} with padding {} is smaller than the dilated kernel span {}",
                self.padding,
                self.span()
            )));
        }
        Ok((padded - self.span()) / self.stride + 1)
    }

    /// `(in - 1)s - 2p + d(k-1) + 1`, rejected when below 1.
    pub fn transpose_output_size(&self, input: usize) -> Result<usize> {
        self.validate()?;
        if input == 0 {
            return Err(Error::InvalidConv("empty input".into()));
        }
        let grown = (input - 1) * self.stride + self.span();
        if grown <= 2 * self.padding {
            return Err(Error::InvalidConv(format!(
                "padding {} consumes the whole transposed output",
                self.padding
            )));
        }
        Ok(grown - 2 * self.padding)
    }

    /// Spec of the transposed convolution that is this convolution's adjoint.
    pub fn transposed(&self) -> Self {
        Self {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }
}

/// Image/column geometry shared by im2col and col2im.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dil: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output rows per block so a column block stays cache-sized.
    fn tile_rows(&self) -> usize {
        const TILE: usize = 1 << 15;
        (TILE / (self.rows() * self.out_w).max(1)).clamp(1, self.out_h.max(1))
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose input coordinate `o*s - p + off` is in range.
    fn valid_range(&self, off: usize, out: usize, extent: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = off as isize - self.pad as isize;
        let lo = if shift >= 0 {
            0
        } else {
            ((-shift) + s - 1) / s
        };
        let hi_excl = (extent as isize - shift + s - 1) / s;
        let lo = lo.clamp(0, out as isize) as usize;
        let hi = hi_excl.clamp(0, out as isize) as usize;
        (lo, hi.max(lo))
    }

    fn im2col<T: Element>(&self, img: &[T], col: &mut [T]) {
        self.im2col_rows(img, col, 0, self.out_h);
    }

    /// im2col restricted to output rows `[oy0, oy1)`.
    fn im2col_rows<T: Element>(&self, img: &[T], col: &mut [T], oy0: usize, oy1: usize) {
        let cols = (oy1 - oy0) * self.out_w;
        for c in 0..self.channels {
            let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let (ylo, yhi) = self.valid_range(ki * self.dil, self.out_h, self.height);
                    let (xlo, xhi) = self.valid_range(kj * self.dil, self.out_w, self.width);
                    for oy in oy0..oy1 {
                        let r = oy - oy0;
                        let line = &mut dst[r * self.out_w..(r + 1) * self.out_w];
                        if oy < ylo || oy >= yhi {
                            line.fill(T::zero());
                            continue;
                        }
                        let iy = oy * self.stride + ki * self.dil - self.pad;
                        let src = &plane[iy * self.width..(iy + 1) * self.width];
                        line[..xlo].fill(T::zero());
                        line[xhi..].fill(T::zero());
                        let x0 = kj * self.dil;
                        if xhi == xlo {
                            continue;
                        }
                        if self.stride == 1 {
                            let start = xlo + x0 - self.pad;
                            line[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                line[ox] = src[ox * self.stride + x0 - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates columns back into the image (adjoint of `im2col`).
    fn col2im<T: Element>(&self, col: &[T], img: &mut [T]) {
        self.col2im_rows(col, img, 0, self.out_h);
    }

    /// col2im for a block holding output rows `[oy0, oy1)`.
    fn col2im_rows<T: Element>(&self, col: &[T], img: &mut [T], oy0: usize, oy1: usize) {
        let cols = (oy1 - oy0) * self.out_w;
        for c in 0..self.channels {
            let plane = &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    let (ylo, yhi) = self.valid_range(ki * self.dil, self.out_h, self.height);
                    let (xlo, xhi) = self.valid_range(kj * self.dil, self.out_w, self.width);
                    let x0 = kj * self.dil;
                    for oy in ylo.max(oy0)..yhi.min(oy1) {
                        let iy = oy * self.stride + ki * self.dil - self.pad;
                        let r = oy - oy0;
                        let line = &src[r * self.out_w..(r + 1) * self.out_w];
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        if self.stride == 1 && xhi > xlo {
                            let start = xlo + x0 - self.pad;
                            let dst = &mut dst[start..start + (xhi - xlo)];
                            for (d, &s) in dst.iter_mut().zip(&line[xlo..xhi]) {
                                *d = *d + s;
                            }
                            continue;
                        }
                        for ox in xlo..xhi {
                            let ix = ox * self.stride + x0 - self.pad;
                            dst[ix] = dst[ix] + line[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Writes the transpose of the row-major `rows×cols` matrix `src`.
fn transpose_into<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Stride-1 kernels without a column buffer.
///
/// Inputs are zero-padded and outputs are laid out with the padded row
/// width, so every tap is a single contiguous multiply-add over the plane;
/// the extra columns are discarded.
mod direct {
    use super::Geometry;
    use crate::engine::tensor::Element;

    struct Layout {
        /// Padded input width (also the output row pitch).
        pitch: usize,
        padded_h: usize,
        /// Span of one output plane in pitch layout.
        span: usize,
        offsets: Vec<usize>,
    }

    impl Layout {
        fn new(geo: &Geometry) -> Self {
            let pitch = geo.width + 2 * geo.pad;
            let offsets = (0..geo.k * geo.k)
                .map(|t| (t / geo.k) * geo.dil * pitch + (t % geo.k) * geo.dil)
                .collect();
            Self {
                pitch,
                padded_h: geo.height + 2 * geo.pad,
                span: (geo.out_h - 1) * pitch + geo.out_w,
                offsets,
            }
        }

        fn padded_plane(&self) -> usize {
            self.padded_h * self.pitch
        }

        fn pad_into<T: Element>(&self, geo: &Geometry, src: &[T], dst: &mut [T]) {
            dst.fill(T::zero());
            for y in 0..geo.height {
                let row = (y + geo.pad) * self.pitch + geo.pad;
                dst[row..row + geo.width].copy_from_slice(&src[y * geo.width..(y + 1) * geo.width]);
            }
        }

        fn crop_add<T: Element>(&self, geo: &Geometry, src: &[T], dst: &mut [T]) {
            for y in 0..geo.height {
                let row = (y + geo.pad) * self.pitch + geo.pad;
                for (d, &s) in dst[y * geo.width..(y + 1) * geo.width]
                    .iter_mut()
                    .zip(&src[row..])
                {
                    *d = *d + s;
                }
            }
        }

        fn to_pitch<T: Element>(&self, geo: &Geometry, src: &[T], dst: &mut [T]) {
            dst.fill(T::zero());
            for y in 0..geo.out_h {
                dst[y * self.pitch..y * self.pitch + geo.out_w]
                    .copy_from_slice(&src[y * geo.out_w..(y + 1) * geo.out_w]);
            }
        }

        fn from_pitch<T: Element>(&self, geo: &Geometry, src: &[T], dst: &mut [T]) {
            for y in 0..geo.out_h {
                dst[y * geo.out_w..(y + 1) * geo.out_w]
                    .copy_from_slice(&src[y * self.pitch..y * self.pitch + geo.out_w]);
            }
        }
    }

    #[inline(always)]
    fn axpy<T: Element>(a: T, x: &[T], y: &mut [T]) {
        for (y, &x) in y.iter_mut().zip(x) {
            *y = *y + a * x;
        }
    }

    #[inline(always)]
    fn dot<T: Element>(x: &[T], y: &[T]) -> T {
        let mut acc = [T::zero(); 8];
        let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
        let (xr, yr) = (xc.remainder(), yc.remainder());
        for (a, b) in xc.zip(yc) {
            for l in 0..8 {
                acc[l] = acc[l] + a[l] * b[l];
            }
        }
        let mut tail = T::zero();
        for (a, b) in xr.iter().zip(yr) {
            tail = tail + *a * *b;
        }
        acc.iter().fold(tail, |s, &v| s + v)
    }

    macro_rules! dispatch {
        ($name:ident, $imp:ident, $avx:ident, ($($arg:ident: $ty:ty),*)) => {
            pub(super) fn $name<T: Element>($($arg: $ty),*) {
                #[cfg(target_arch = "x86_64")]
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2.
                    return unsafe { $avx($($arg),*) };
                }
                $imp($($arg),*)
            }

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx2")]
            unsafe fn $avx<T: Element>($($arg: $ty),*) {
                $imp($($arg),*)
            }
        };
    }

    dispatch!(forward, forward_impl, forward_avx2, (x: &[T], w: &[T], out: &mut [T], geo: &Geometry, n: usize, o: usize));
    dispatch!(backward_input, backward_input_impl, backward_input_avx2, (g: &[T], w: &[T], dx: &mut [T], geo: &Geometry, n: usize, o: usize));
    dispatch!(backward_weight, backward_weight_impl, backward_weight_avx2, (g: &[T], x: &[T], dw: &mut [T], geo: &Geometry, n: usize, o: usize));

    #[inline(always)]
    fn forward_impl<T: Element>(
        x: &[T],
        w: &[T],
        out: &mut [T],
        geo: &Geometry,
        n: usize,
        o: usize,
    ) {
        let lay = Layout::new(geo);
        let (c, kk, pp) = (geo.channels, geo.k * geo.k, lay.padded_plane());
        let (in_plane, out_plane) = (geo.height * geo.width, geo.cols());
        let mut xp = vec![T::zero(); c * pp];
        let mut acc = vec![T::zero(); lay.span];
        for i in 0..n {
            for ic in 0..c {
                lay.pad_into(
                    geo,
                    &x[(i * c + ic) * in_plane..][..in_plane],
                    &mut xp[ic * pp..][..pp],
                );
            }
            for oc in 0..o {
                acc.fill(T::zero());
                for ic in 0..c {
                    let src = &xp[ic * pp..][..pp];
                    let wk = &w[(oc * c + ic) * kk..][..kk];
                    for (t, &off) in lay.offsets.iter().enumerate() {
                        axpy(wk[t], &src[off..off + lay.span], &mut acc);
                    }
                }
                lay.from_pitch(geo, &acc, &mut out[(i * o + oc) * out_plane..][..out_plane]);
            }
        }
    }

    #[inline(always)]
    fn backward_input_impl<T: Element>(
        g: &[T],
        w: &[T],
        dx: &mut [T],
        geo: &Geometry,
        n: usize,
        o: usize,
    ) {
        let lay = Layout::new(geo);
        let (c, kk, pp) = (geo.channels, geo.k * geo.k, lay.padded_plane());
        let (in_plane, out_plane) = (geo.height * geo.width, geo.cols());
        let mut gp = vec![T::zero(); o * lay.span];
        let mut acc = vec![T::zero(); pp];
        for i in 0..n {
            for oc in 0..o {
                lay.to_pitch(
                    geo,
                    &g[(i * o + oc) * out_plane..][..out_plane],
                    &mut gp[oc * lay.span..][..lay.span],
                );
            }
            for ic in 0..c {
                acc.fill(T::zero());
                for oc in 0..o {
                    let src = &gp[oc * lay.span..][..lay.span];
                    let wk = &w[(oc * c + ic) * kk..][..kk];
                    for (t, &off) in lay.offsets.iter().enumerate() {
                        axpy(wk[t], src, &mut acc[off..off + lay.span]);
                    }
                }
                lay.crop_add(geo, &acc, &mut dx[(i * c + ic) * in_plane..][..in_plane]);
            }
        }
    }

    #[inline(always)]
    fn backward_weight_impl<T: Element>(
        g: &[T],
        x: &[T],
        dw: &mut [T],
        geo: &Geometry,
        n: usize,
        o: usize,
    ) {
        let lay = Layout::new(geo);
        let (c, kk, pp) = (geo.channels, geo.k * geo.k, lay.padded_plane());
        let (in_plane, out_plane) = (geo.height * geo.width, geo.cols());
        let mut xp = vec![T::zero(); c * pp];
        let mut gp = vec![T::zero(); lay.span];
        for i in 0..n {
            for ic in 0..c {
                lay.pad_into(
                    geo,
                    &x[(i * c + ic) * in_plane..][..in_plane],
                    &mut xp[ic * pp..][..pp],
                );
            }
            for oc in 0..o {
                lay.to_pitch(geo, &g[(i * o + oc) * out_plane..][..out_plane], &mut gp);
                for ic in 0..c {
                    let src = &xp[ic * pp..][..pp];
                    let acc = &mut dw[(oc * c + ic) * kk..][..kk];
                    for (t, &off) in lay.offsets.iter().enumerate() {
                        acc[t] = acc[t] + dot(&gp, &src[off..off + lay.span]);
                    }
                }
            }
        }
    }
}

fn check_4d(op: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    match *t {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(
            op,
            format!("expected a 4-D tensor, got {t:?}"),
        )),
    }
}

pub(crate) fn check_params(
    op: &'static str,
    spec: &ConvSpec,
    x: &[usize],
    w: &[usize],
    b: Option<&[usize]>,
    transpose: bool,
) -> Result<()> {
    let [_, c, _, _] = check_4d(op, x)?;
    let (x_channels, w_shape, b_len) = if transpose {
        (
            spec.in_channels,
            [
                spec.in_channels,
                spec.out_channels,
                spec.kernel_size,
                spec.kernel_size,
            ],
            spec.out_channels,
        )
    } else {
        (spec.in_channels, spec.weight_shape(), spec.out_channels)
    };
    if c != x_channels {
        return Err(Error::shape(
            op,
            format!("input has {c} channels, spec expects {x_channels}"),
        ));
    }
    if w != w_shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: w.to_vec(),
            rhs: w_shape.to_vec(),
        });
    }
    if let Some(b) = b {
        if b != [b_len] {
            return Err(Error::ShapeMismatch {
                op,
                lhs: b.to_vec(),
                rhs: vec![b_len],
            });
        }
    }
    Ok(())
}

fn conv_geometry(spec: &ConvSpec, x: [usize; 4]) -> Result<Geometry> {
    Ok(Geometry {
        channels: x[1],
        height: x[2],
        width: x[3],
        out_h: spec.output_size(x[2])?,
        out_w: spec.output_size(x[3])?,
        k: spec.kernel_size,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
    })
}

/// Geometry of the convolution a transposed convolution is the adjoint of:
/// the "image" is the transposed output, the column grid is the input.
fn transpose_geometry(spec: &ConvSpec, x: [usize; 4]) -> Result<Geometry> {
    Ok(Geometry {
        channels: spec.out_channels,
        height: spec.transpose_output_size(x[2])?,
        width: spec.transpose_output_size(x[3])?,
        out_h: x[2],
        out_w: x[3],
        k: spec.kernel_size,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
    })
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn bias_grad<T: Element>(g: &Tensor<T>, channels: usize) -> Tensor<T> {
    let s = g.shape();
    let plane = s[2] * s[3];
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        let c = i % channels;
        db[c] = db[c] + chunk.iter().copied().sum();
    }
    Tensor::new([channels], db).expect("bias shape")
}

pub(crate) fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_forward_with(x, w, b, spec, Path::choose(spec, x.shape()))
}

/// Kernel family used for a stride-1 or strided convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Path {
    /// im2col followed by a GEMM.
    Gemm,
    /// Shifted row updates without a column buffer (stride 1 only).
    Direct,
}

impl Path {
    /// Direct kernels win for stride-1 spatial kernels on planes wide
    /// enough to stream.
    pub(crate) fn choose(spec: &ConvSpec, x: &[usize]) -> Self {
        let wide = x.get(3).copied().unwrap_or(0) >= 8;
        if spec.stride == 1 && spec.kernel_size > 1 && wide {
            Path::Direct
        } else {
            Path::Gemm
        }
    }
}

pub(crate) fn conv2d_forward_with<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
    path: Path,
) -> Result<Tensor<T>> {
    check_params(
        "conv2d",
        spec,
        x.shape(),
        w.shape(),
        b.map(|b| b.shape()),
        false,
    )?;
    let xs = check_4d("conv2d", x.shape())?;
    let geo = conv_geometry(spec, xs)?;
    let (n, o) = (xs[0], spec.out_channels);
    let (rows, cols) = (geo.rows(), geo.cols());
    let in_plane = xs[1] * xs[2] * xs[3];
    let mut out = vec![T::zero(); n * o * cols];
    if path == Path::Direct && spec.stride == 1 {
        direct::forward(x.data(), w.data(), &mut out, &geo, n, o);
        if let Some(b) = b {
            add_bias(&mut out, b.data(), cols);
        }
        return Tensor::new([n, o, geo.out_h, geo.out_w], out);
    }
    let tile = geo.tile_rows();
    let mut col = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * tile * geo.out_w]
    };
    for i in 0..n {
        let img = &x.data()[i * in_plane..(i + 1) * in_plane];
        let dst = &mut out[i * o * cols..(i + 1) * o * cols];
        if geo.is_pointwise() {
            T::gemm(
                o,
                rows,
                cols,
                T::one(),
                w.data(),
                (rows as isize, 1),
                img,
                (cols as isize, 1),
                T::zero(),
                dst,
                (cols as isize, 1),
            );
            continue;
        }
        for oy0 in (0..geo.out_h).step_by(tile) {
            let oy1 = (oy0 + tile).min(geo.out_h);
            let tc = (oy1 - oy0) * geo.out_w;
            geo.im2col_rows(img, &mut col[..rows * tc], oy0, oy1);
            T::gemm(
                o,
                rows,
                tc,
                T::one(),
                w.data(),
                (rows as isize, 1),
                &col[..rows * tc],
                (tc as isize, 1),
                T::zero(),
                &mut dst[oy0 * geo.out_w..],
                (cols as isize, 1),
            );
        }
    }
    if let Some(b) = b {
        add_bias(&mut out, b.data(), cols);
    }
    Tensor::new([n, o, geo.out_h, geo.out_w], out)
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub w: Option<Tensor<T>>,
    pub b: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    need: [bool; 3],
) -> ConvGrads<T> {
    conv2d_backward_with(g, x, w, spec, need, Path::choose(spec, x.shape()))
}

pub(crate) fn conv2d_backward_with<T: Element>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    need: [bool; 3],
    path: Path,
) -> ConvGrads<T> {
    let xs = check_4d("conv2d", x.shape()).expect("checked in forward");
    let geo = conv_geometry(spec, xs).expect("checked in forward");
    let (n, o) = (xs[0], spec.out_channels);
    let (rows, cols) = (geo.rows(), geo.cols());
    let in_plane = xs[1] * xs[2] * xs[3];
    let mut dx = need[0].then(|| vec![T::zero(); x.numel()]);
    let mut dw = need[1].then(|| vec![T::zero(); w.numel()]);
    if path == Path::Direct && spec.stride == 1 {
        if let Some(dx) = dx.as_mut() {
            direct::backward_input(g.data(), w.data(), dx, &geo, n, o);
        }
        if let Some(dw) = dw.as_mut() {
            direct::backward_weight(g.data(), x.data(), dw, &geo, n, o);
        }
        return ConvGrads {
            x: dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
            w: dw.map(|d| Tensor::new(w.shape(), d).expect("shape")),
            b: need[2].then(|| bias_grad(g, o)),
        };
    }
    let tile = if geo.is_pointwise() {
        geo.out_h.max(1)
    } else {
        geo.tile_rows()
    };
    let block = rows * tile * geo.out_w;
    let mut col = vec![T::zero(); block];
    let mut col_t = if need[1] {
        vec![T::zero(); block]
    } else {
        Vec::new()
    };
    for i in 0..n {
        let gi = &g.data()[i * o * cols..(i + 1) * o * cols];
        let img = &x.data()[i * in_plane..(i + 1) * in_plane];
        for oy0 in (0..geo.out_h).step_by(tile) {
            let oy1 = (oy0 + tile).min(geo.out_h);
            let tc = (oy1 - oy0) * geo.out_w;
            let gt = &gi[oy0 * geo.out_w..];
            if let Some(dw) = dw.as_mut() {
                if geo.is_pointwise() {
                    transpose_into(img, rows, cols, &mut col_t);
                } else {
                    geo.im2col_rows(img, &mut col[..rows * tc], oy0, oy1);
                    transpose_into(&col[..rows * tc], rows, tc, &mut col_t[..rows * tc]);
                }
                // dW (O×K) += G (O×P) · colᵀ (P×K)
                T::gemm(
                    o,
                    tc,
                    rows,
                    T::one(),
                    gt,
                    (cols as isize, 1),
                    &col_t[..rows * tc],
                    (rows as isize, 1),
                    T::one(),
                    dw,
                    (rows as isize, 1),
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dst = &mut dx[i * in_plane..(i + 1) * in_plane];
                // dcol (K×P) = Wᵀ (K×O) · G (O×P)
                if geo.is_pointwise() {
                    T::gemm(
                        rows,
                        o,
                        cols,
                        T::one(),
                        w.data(),
                        (1, rows as isize),
                        gi,
                        (cols as isize, 1),
                        T::zero(),
                        dst,
                        (cols as isize, 1),
                    );
                } else {
                    T::gemm(
                        rows,
                        o,
                        tc,
                        T::one(),
                        w.data(),
                        (1, rows as isize),
                        gt,
                        (cols as isize, 1),
                        T::zero(),
                        &mut col[..rows * tc],
                        (tc as isize, 1),
                    );
                    geo.col2im_rows(&col[..rows * tc], dst, oy0, oy1);
                }
            }
        }
    }
    ConvGrads {
        x: dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
        w: dw.map(|d| Tensor::new(w.shape(), d).expect("shape")),
        b: need[2].then(|| bias_grad(g, o)),
    }
}

pub(crate) fn conv_transpose2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_params(
        "conv2d_transpose",
        spec,
        x.shape(),
        w.shape(),
        b.map(|b| b.shape()),
        true,
    )?;
    let xs = check_4d("conv2d_transpose", x.shape())?;
    let geo = transpose_geometry(spec, xs)?;
    let (n, ci) = (xs[0], spec.in_channels);
    let (rows, cols) = (geo.rows(), geo.cols());
    let out_plane = geo.channels * geo.height * geo.width;
    let mut out = vec![T::zero(); n * out_plane];
    let mut col = vec![T::zero(); rows * cols];
    for i in 0..n {
        let xi = &x.data()[i * ci * cols..(i + 1) * ci * cols];
        // col (K×P) = Wᵀ (K×Ci) · X (Ci×P)
        T::gemm(
            rows,
            ci,
            cols,
            T::one(),
            w.data(),
            (1, rows as isize),
            xi,
            (cols as isize, 1),
            T::zero(),
            &mut col,
            (cols as isize, 1),
        );
        geo.col2im(&col, &mut out[i * out_plane..(i + 1) * out_plane]);
    }
    if let Some(b) = b {
        add_bias(&mut out, b.data(), geo.height * geo.width);
    }
    Tensor::new([n, geo.channels, geo.height, geo.width], out)
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    need: [bool; 3],
) -> ConvGrads<T> {
    let xs = check_4d("conv2d_transpose", x.shape()).expect("checked in forward");
    let geo = transpose_geometry(spec, xs).expect("checked in forward");
    let (n, ci) = (xs[0], spec.in_channels);
    let (rows, cols) = (geo.rows(), geo.cols());
    let out_plane = geo.channels * geo.height * geo.width;
    let mut dx = need[0].then(|| vec![T::zero(); x.numel()]);
    let mut dw = need[1].then(|| vec![T::zero(); w.numel()]);
    let mut col = vec![T::zero(); rows * cols];
    if need[0] || need[1] {
        for i in 0..n {
            geo.im2col(&g.data()[i * out_plane..(i + 1) * out_plane], &mut col);
            if let Some(dx) = dx.as_mut() {
                // dX (Ci×P) = W (Ci×K) · col (K×P)
                T::gemm(
                    ci,
                    rows,
                    cols,
                    T::one(),
                    w.data(),
                    (rows as isize, 1),
                    &col,
                    (cols as isize, 1),
                    T::zero(),
                    &mut dx[i * ci * cols..(i + 1) * ci * cols],
                    (cols as isize, 1),
                );
            }
            if let Some(dw) = dw.as_mut() {
                // dW (Ci×K) += X (Ci×P) · colᵀ (P×K)
                T::gemm(
                    ci,
                    cols,
                    rows,
                    T::one(),
                    &x.data()[i * ci * cols..(i + 1) * ci * cols],
                    (cols as isize, 1),
                    &col,
                    (1, cols as isize),
                    T::one(),
                    dw,
                    (rows as isize, 1),
                );
            }
        }
    }
    ConvGrads {
        x: dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
        w: dw.map(|d| Tensor::new(w.shape(), d).expect("shape")),
        b: need[2].then(|| bias_grad(g, geo.channels)),
    }
}
