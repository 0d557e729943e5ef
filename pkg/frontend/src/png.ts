/**
 * Minimal 8-bit grayscale PNG writer.
 *
 * The mask prompt is painted client-side and uploaded as a PNG, so the
 * annotator needs an encoder that works identically in the browser and
 * in Node. Pixels are wrapped in stored (uncompressed) deflate blocks,
 * which every PNG reader accepts; masks are tiny, so compression would
 * buy nothing.
 */

const SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];
const MAX_STORED_BLOCK = 65535;

const crcTable = (() => {
    const table = new Uint32Array(256);
    for (let n = 0; n < 256; n++) {
        let c = n;
        for (let k = 0; k < 8; k++) {
            c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
        }
        table[n] = c >>> 0;
    }
    return table;
})();

function crc32(bytes: Uint8Array): number {
    let c = 0xffffffff;
    for (let i = 0; i < bytes.length; i++) {
        c = crcTable[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
    }
    return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
    let a = 1;
    let b = 0;
    for (let i = 0; i < bytes.length; i++) {
        a = (a + bytes[i]) % 65521;
        b = (b + a) % 65521;
    }
    return ((b << 16) | a) >>> 0;
}

function writeUint32(target: Uint8Array, offset: number, value: number): void {
    target[offset] = (value >>> 24) & 0xff;
    target[offset + 1] = (value >>> 16) & 0xff;
    target[offset + 2] = (value >>> 8) & 0xff;
    target[offset + 3] = value & 0xff;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
    const out = new Uint8Array(12 + data.length);
    writeUint32(out, 0, data.length);
    for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
    out.set(data, 8);
    writeUint32(out, 8 + data.length, crc32(out.subarray(4, 8 + data.length)));
    return out;
}

/** Wrap raw bytes in a zlib stream of stored deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
    const blocks = Math.max(1, Math.ceil(raw.length / MAX_STORED_BLOCK));
    const out = new Uint8Array(2 + raw.length + blocks * 5 + 4);
    out[0] = 0x78; // 32K window, deflate
    out[1] = 0x01; // no dictionary, fastest-compression flag bits
    let src = 0;
    let dst = 2;
    for (let b = 0; b < blocks; b++) {
        const len = Math.min(MAX_STORED_BLOCK, raw.length - src);
        out[dst] = b === blocks - 1 ? 1 : 0; // BFINAL, BTYPE=00 (stored)
        out[dst + 1] = len & 0xff;
        out[dst + 2] = (len >>> 8) & 0xff;
        out[dst + 3] = ~len & 0xff;
        out[dst + 4] = (~len >>> 8) & 0xff;
        out.set(raw.subarray(src, src + len), dst + 5);
        src += len;
        dst += 5 + len;
    }
    writeUint32(out, dst, adler32(raw));
    return out;
}

/**
 * Encode a row-major grayscale raster (one byte per pixel) as PNG.
 * Values are written verbatim; a binary mask should use 0 and 255.
 */
export function encodeGrayPng(width: number, height: number, pixels: Uint8Array): Uint8Array {
    if (width < 1 || height < 1) {
        throw new Error(`png size must be positive, got ${width}x${height}`);
    }
    if (pixels.length !== width * height) {
        throw new Error(`pixel count ${pixels.length} does not match ${width}x${height}`);
    }
    const header = new Uint8Array(13);
    writeUint32(header, 0, width);
    writeUint32(header, 4, height);
    header[8] = 8; // bit depth
    header[9] = 0; // color type: grayscale
    // compression, filter, interlace stay 0

    // one filter byte (0 = None) in front of every scanline
    const raw = new Uint8Array(height * (width + 1));
    for (let r = 0; r < height; r++) {
        raw.set(pixels.subarray(r * width, (r + 1) * width), r * (width + 1) + 1);
    }

    const parts = [
        new Uint8Array(SIGNATURE),
        chunk("IHDR", header),
        chunk("IDAT", zlibStored(raw)),
        chunk("IEND", new Uint8Array(0)),
    ];
    const total = parts.reduce((n, p) => n + p.length, 0);
    const out = new Uint8Array(total);
    let offset = 0;
    for (const part of parts) {
        out.set(part, offset);
        offset += part.length;
    }
    return out;
}
