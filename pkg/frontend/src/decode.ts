/**
 * Browser image decoding: PNG (or any browser-supported format) bytes
 * to RGBA pixels via an offscreen canvas. Tests substitute a pure
 * decoder, so nothing else in the client touches image codecs.
 */

import type { RgbaRaster } from "./types.js";

export async function canvasDecode(bytes: Uint8Array): Promise<RgbaRaster> {
    const copy = new Uint8Array(bytes);
    const bitmap = await createImageBitmap(new Blob([copy]));
    const canvas = document.createElement("canvas");
    canvas.width = bitmap.width;
    canvas.height = bitmap.height;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    ctx.drawImage(bitmap, 0, 0);
    const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
    return { width: bitmap.width, height: bitmap.height, rgba: data.data };
}
