/**
 * Binary raster painting and the wire coordinate conventions.
 *
 * The stamping rules here mirror the service's prompt rasterizer:
 * points become filled disks (squared-distance test against radius
 * squared), strokes become capsules around each polyline segment.
 * Keeping the exact same inequality on both ends is what makes a
 * brush mask drawn in the browser decode to the same binary raster
 * the server would have produced from the equivalent geometry.
 */

import type { GrayRaster } from "./types.js";

/** Server-side dilation radius for point prompts, in pixels. */
export const POINT_RADIUS = 3;

export function emptyRaster(width: number, height: number): GrayRaster {
    return { width, height, data: new Uint8Array(width * height) };
}

export function stampDisk(raster: GrayRaster, row: number, col: number, radius: number): void {
    const { width, height, data } = raster;
    const r0 = Math.max(0, row - radius);
    const r1 = Math.min(height, row + radius + 1);
    const c0 = Math.max(0, col - radius);
    const c1 = Math.min(width, col + radius + 1);
    const rr = radius * radius;
    for (let r = r0; r < r1; r++) {
        for (let c = c0; c < c1; c++) {
            if ((r - row) * (r - row) + (c - col) * (c - col) <= rr) {
                data[r * width + c] = 1;
            }
        }
    }
}

export function stampSegment(
    raster: GrayRaster,
    p: [number, number],
    q: [number, number],
    radius: number,
): void {
    const { width, height, data } = raster;
    const r0 = Math.max(0, Math.min(p[0], q[0]) - radius);
    const r1 = Math.min(height, Math.max(p[0], q[0]) + radius + 1);
    const c0 = Math.max(0, Math.min(p[1], q[1]) - radius);
    const c1 = Math.min(width, Math.max(p[1], q[1]) + radius + 1);
    if (r0 >= r1 || c0 >= c1) return;
    const pr = p[0];
    const pc = p[1];
    const dr = q[0] - p[0];
    const dc = q[1] - p[1];
    const segLen2 = dr * dr + dc * dc;
    const rr = radius * radius;
    for (let r = r0; r < r1; r++) {
        for (let c = c0; c < c1; c++) {
            let t = 0;
            if (segLen2 > 0) {
                t = ((r - pr) * dr + (c - pc) * dc) / segLen2;
                t = Math.min(1, Math.max(0, t));
            }
            const offR = r - (pr + t * dr);
            const offC = c - (pc + t * dc);
            if (offR * offR + offC * offC <= rr) {
                data[r * width + c] = 1;
            }
        }
    }
}

/** Stamp a whole polyline: lone points as disks, segments as capsules. */
export function stampStroke(
    raster: GrayRaster,
    points: [number, number][],
    radius: number,
): void {
    if (points.length === 0) return;
    if (points.length === 1) {
        stampDisk(raster, points[0][0], points[0][1], radius);
        return;
    }
    for (let i = 0; i + 1 < points.length; i++) {
        stampSegment(raster, points[i], points[i + 1], radius);
    }
}

// ------------------------------------------------ wire coordinate mapping

/** Pixel index -> normalized cell-center coordinate. */
export function cellCenter(px: number, size: number): number {
    return (px + 0.5) / size;
}

/** Normalized coordinate -> pixel index, exactly as the server does it. */
export function pixelFromNormalized(value: number, size: number): number {
    return Math.min(Math.trunc(value * size), size - 1);
}

/** Python-style round-half-to-even, used for stroke radius recovery. */
export function roundHalfEven(value: number): number {
    const floor = Math.floor(value);
    const diff = value - floor;
    if (diff > 0.5) return floor + 1;
    if (diff < 0.5) return floor;
    return floor % 2 === 0 ? floor : floor + 1;
}

/** Normalized stroke radius fraction -> pixel radius, server rule. */
export function radiusFromFraction(fraction: number, height: number, width: number): number {
    return Math.max(1, roundHalfEven(fraction * Math.min(height, width)));
}

/**
 * Map a pointer position on a scaled canvas to an image pixel.
 * The canvas is assumed to display the full image stretched to its
 * own dimensions (the annotator always draws it that way).
 */
export function canvasToPixel(
    x: number,
    y: number,
    canvasWidth: number,
    canvasHeight: number,
    imageWidth: number,
    imageHeight: number,
): [number, number] {
    const col = Math.min(imageWidth - 1, Math.max(0, Math.floor((x * imageWidth) / canvasWidth)));
    const row = Math.min(
        imageHeight - 1,
        Math.max(0, Math.floor((y * imageHeight) / canvasHeight)),
    );
    return [row, col];
}
