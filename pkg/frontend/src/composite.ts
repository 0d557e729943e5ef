/**
 * Client-side result rendering: the alpha cutout preview and the
 * guidance heat overlay.
 *
 * The cutout composites the target over a checkerboard with the served
 * alpha, out = alpha * image + (1 - alpha) * backdrop, which is the
 * standard over-operator with the checker as background. Both views are
 * recomputed from rasters the client already holds; toggling never
 * re-requests anything from the service.
 */

import type { GrayRaster, RgbaRaster } from "./types.js";

export const CHECKER_TILE = 8;
export const CHECKER_LIGHT = 0xff;
export const CHECKER_DARK = 0xcc;

export function checkerShade(row: number, col: number): number {
    const parity = (Math.floor(row / CHECKER_TILE) + Math.floor(col / CHECKER_TILE)) % 2;
    return parity === 0 ? CHECKER_LIGHT : CHECKER_DARK;
}

function assertSameSize(image: RgbaRaster, map: GrayRaster, name: string): void {
    if (image.width !== map.width || image.height !== map.height) {
        throw new Error(
            `${name} is ${map.width}x${map.height} but image is ${image.width}x${image.height}`,
        );
    }
}

/** Composite the image over a checkerboard using the alpha matte. */
export function checkerComposite(image: RgbaRaster, alpha: GrayRaster): RgbaRaster {
    assertSameSize(image, alpha, "alpha");
    const { width, height } = image;
    const out = new Uint8ClampedArray(width * height * 4);
    for (let r = 0; r < height; r++) {
        for (let c = 0; c < width; c++) {
            const i = r * width + c;
            const a = alpha.data[i] / 255;
            const back = checkerShade(r, c);
            out[i * 4] = Math.round(a * image.rgba[i * 4] + (1 - a) * back);
            out[i * 4 + 1] = Math.round(a * image.rgba[i * 4 + 1] + (1 - a) * back);
            out[i * 4 + 2] = Math.round(a * image.rgba[i * 4 + 2] + (1 - a) * back);
            out[i * 4 + 3] = 255;
        }
    }
    return { width, height, rgba: out };
}

/** Black-red-yellow-white ramp for guidance values. */
export function heatColor(value: number): [number, number, number] {
    return [
        Math.min(255, 3 * value),
        Math.min(255, Math.max(0, 3 * value - 255)),
        Math.max(0, 3 * value - 510),
    ];
}

const HEAT_WEIGHT = 0.55;

/** Blend the guidance heat ramp over the target image. */
export function heatOverlay(image: RgbaRaster, guidance: GrayRaster): RgbaRaster {
    assertSameSize(image, guidance, "guidance");
    const { width, height } = image;
    const out = new Uint8ClampedArray(width * height * 4);
    for (let i = 0; i < width * height; i++) {
        const [hr, hg, hb] = heatColor(guidance.data[i]);
        out[i * 4] = Math.round((1 - HEAT_WEIGHT) * image.rgba[i * 4] + HEAT_WEIGHT * hr);
        out[i * 4 + 1] = Math.round((1 - HEAT_WEIGHT) * image.rgba[i * 4 + 1] + HEAT_WEIGHT * hg);
        out[i * 4 + 2] = Math.round((1 - HEAT_WEIGHT) * image.rgba[i * 4 + 2] + HEAT_WEIGHT * hb);
        out[i * 4 + 3] = 255;
    }
    return { width, height, rgba: out };
}

/** Single channel of a decoded grayscale PNG (r == g == b). */
export function rgbaToGray(raster: RgbaRaster): GrayRaster {
    const data = new Uint8Array(raster.width * raster.height);
    for (let i = 0; i < data.length; i++) {
        data[i] = raster.rgba[i * 4];
    }
    return { width: raster.width, height: raster.height, data };
}
