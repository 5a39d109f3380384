//! Input framing shared by the fuzz targets.

/// Splits `data` into `n` parts, each framed as a little-endian `u32` length
/// followed by that many bytes. A truncated frame takes whatever is left;
/// parts past the end of the input are `None`.
pub fn split_parts(mut data: &[u8], n: usize) -> Vec<Option<&[u8]>> {
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        if data.len() < 4 {
            parts.push(None);
            continue;
        }
        let len = u32::from_le_bytes([data[0], data[1], data[2], data[3]]) as usize;
        let rest = &data[4..];
        let take = len.min(rest.len());
        parts.push(Some(&rest[..take]));
        data = &rest[take..];
    }
    parts
}

/// Inverse of [`split_parts`], used to build seed inputs.
pub fn join_parts(parts: &[Option<&[u8]>]) -> Vec<u8> {
    let mut out = Vec::new();
    for part in parts.iter().map_while(|p| *p) {
        out.extend_from_slice(&(part.len() as u32).to_le_bytes());
        out.extend_from_slice(part);
    }
    out
}
