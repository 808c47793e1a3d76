use crate::graph::{same_padding, spatial_out, OpAttrs, Padding};

/// Sliding-window geometry for convolutions and pooling over NHWC tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Window {
    pub fn new(in_h: usize, in_w: usize, kernel: [usize; 2], attrs: &OpAttrs) -> Window {
        let [kh, kw] = kernel;
        let [sh, sw] = attrs.stride;
        let (pad_top, pad_left) = match attrs.padding {
            Padding::Valid => (0, 0),
            Padding::Same => (same_padding(in_h, kh, sh), same_padding(in_w, kw, sw)),
        };
        Window {
            in_h,
            in_w,
            out_h: spatial_out(in_h, kh, sh, attrs.padding).expect("shape-checked window"),
            out_w: spatial_out(in_w, kw, sw, attrs.padding).expect("shape-checked window"),
            kh,
            kw,
            sh,
            sw,
            pad_top,
            pad_left,
        }
    }

    /// Input coordinate for output position `o` and kernel tap `k`, or `None`
    /// when the tap falls into zero padding.
    #[inline]
    pub fn row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.sh + ky).checked_sub(self.pad_top).filter(|&y| y < self.in_h)
    }

    #[inline]
    pub fn col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.sw + kx).checked_sub(self.pad_left).filter(|&x| x < self.in_w)
    }
}
