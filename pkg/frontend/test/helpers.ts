/** Shared test fixtures: a pure PNG decoder (the browser decoder needs a
 * real canvas) and synthetic image generators. */

import { PNG } from "pngjs";

import type { GrayRaster, RgbaRaster } from "../src/types.js";

/** ImageDecoder for tests; handles any PNG pngjs can read. */
export async function pngDecode(bytes: Uint8Array): Promise<RgbaRaster> {
    const png = PNG.sync.read(Buffer.from(bytes));
    return {
        width: png.width,
        height: png.height,
        rgba: new Uint8ClampedArray(png.data.buffer, png.data.byteOffset, png.width * png.height * 4),
    };
}

/** Deterministic RGB test image encoded as PNG. */
export function colorPng(width: number, height: number, salt = 0): Uint8Array {
    const png = new PNG({ width, height });
    for (let i = 0; i < width * height; i++) {
        png.data[i * 4] = (i * 3 + salt) % 256;
        png.data[i * 4 + 1] = (i * 5 + salt * 7) % 256;
        png.data[i * 4 + 2] = (i * 11 + salt * 13) % 256;
        png.data[i * 4 + 3] = 255;
    }
    return new Uint8Array(PNG.sync.write(png));
}

/** Write a binary raster as an RGB PNG with pngjs (an independent encoder,
 * standing in for how a CLI user would save the same mask). */
export function pngjsMaskPng(raster: GrayRaster): Uint8Array {
    const png = new PNG({ width: raster.width, height: raster.height });
    for (let i = 0; i < raster.data.length; i++) {
        const v = raster.data[i] ? 255 : 0;
        png.data[i * 4] = v;
        png.data[i * 4 + 1] = v;
        png.data[i * 4 + 2] = v;
        png.data[i * 4 + 3] = 255;
    }
    return new Uint8Array(PNG.sync.write(png));
}

/** Tiny seeded RNG (mulberry32) so trials are reproducible. */
export function rng(seed: number): () => number {
    let a = seed >>> 0;
    return () => {
        a = (a + 0x6d2b79f5) >>> 0;
        let t = a;
        t = Math.imul(t ^ (t >>> 15), t | 1);
        t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
        return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
    };
}

export function randInt(random: () => number, low: number, high: number): number {
    return low + Math.floor(random() * (high - low));
}

export function rastersEqual(a: GrayRaster, b: GrayRaster): boolean {
    if (a.width !== b.width || a.height !== b.height) return false;
    for (let i = 0; i < a.data.length; i++) {
        if (a.data[i] !== b.data[i]) return false;
    }
    return true;
}
