/**
 * Wire types for the matting service JSON API.
 *
 * Coordinates on the wire are [row, col] normalized to [0, 1]; stroke
 * radii are fractions of min(height, width). Pixel prompts are encoded
 * at cell centers, (px + 0.5) / size, so the server recovers the exact
 * pixel with min(int(v * size), size - 1).
 */

export type ImageEntry = {
    image_id: string;
    name: string;
    file: string;
};

export type PointsPromptDoc = {
    kind: "points";
    reference_image_id: string;
    points: number[][];
};

export type ScribblesPromptDoc = {
    kind: "scribbles";
    reference_image_id: string;
    strokes: { points: number[][]; radius: number }[];
};

export type MaskPromptDoc = {
    kind: "mask";
    reference_image_id: string;
    mask_ref: string;
};

export type PromptDoc = PointsPromptDoc | ScribblesPromptDoc | MaskPromptDoc;

export type SessionDoc = {
    session_id: string;
    images: ImageEntry[];
    prompt: PromptDoc | null;
};

export type JobState = "queued" | "running" | "done" | "failed";

export type JobDoc = {
    job_id: string;
    session_id: string;
    state: JobState;
    progress: { done: number; total: number };
    targets: string[];
    cache_key: string;
    error: string | null;
};

/** A decoded grayscale raster, row-major, one byte per pixel. */
export type GrayRaster = {
    width: number;
    height: number;
    data: Uint8Array;
};

/** A decoded color raster, row-major RGBA, four bytes per pixel. */
export type RgbaRaster = {
    width: number;
    height: number;
    rgba: Uint8ClampedArray;
};

/** Decodes PNG (or other raster) bytes to RGBA pixels. The browser
 * build uses a canvas; tests plug in a pure decoder. */
export type ImageDecoder = (bytes: Uint8Array) => Promise<RgbaRaster>;
