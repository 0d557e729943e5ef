import { describe, expect, it } from "vitest";

import { CanvasPrompt, pointAction, strokeAction } from "../src/prompt.js";
import {
    POINT_RADIUS,
    canvasToPixel,
    cellCenter,
    emptyRaster,
    pixelFromNormalized,
    radiusFromFraction,
    roundHalfEven,
    stampDisk,
    stampStroke,
} from "../src/raster.js";
import type { PointsPromptDoc, ScribblesPromptDoc } from "../src/types.js";
import { randInt, rastersEqual, rng } from "./helpers.js";

describe("wire coordinate mapping", () => {
    it("recovers every pixel from its cell center", () => {
        for (const size of [1, 2, 3, 17, 64, 641]) {
            for (let px = 0; px < size; px++) {
                expect(pixelFromNormalized(cellCenter(px, size), size)).toBe(px);
            }
        }
    });

    it("maps canvas clicks at any scale to the pixel under the cursor", () => {
        const random = rng(5);
        for (let trial = 0; trial < 200; trial++) {
            const width = randInt(random, 1, 200);
            const height = randInt(random, 1, 200);
            const scale = 1 + random() * 9;
            const row = randInt(random, 0, height);
            const col = randInt(random, 0, width);
            // click somewhere inside the displayed pixel square
            const x = (col + random()) * scale;
            const y = (row + random()) * scale;
            expect(
                canvasToPixel(x, y, width * scale, height * scale, width, height),
            ).toEqual([row, col]);
        }
    });

    it("rounds stroke radii half-to-even like the service", () => {
        expect(roundHalfEven(0.5)).toBe(0);
        expect(roundHalfEven(1.5)).toBe(2);
        expect(roundHalfEven(2.5)).toBe(2);
        expect(roundHalfEven(2.4)).toBe(2);
        expect(roundHalfEven(2.6)).toBe(3);
        expect(radiusFromFraction(0, 64, 64)).toBe(1); // floor of 1 px
        expect(radiusFromFraction(3 / 64, 64, 96)).toBe(3);
    });
});

describe("CanvasPrompt", () => {
    it("serializes clicks as points at cell centers", () => {
        const prompt = new CanvasPrompt(64, 48);
        prompt.push(pointAction(10, 20));
        prompt.push(pointAction(47, 63));
        const doc = prompt.serialize("ref-1") as PointsPromptDoc;
        expect(doc.kind).toBe("points");
        expect(doc.reference_image_id).toBe("ref-1");
        expect(doc.points).toEqual([
            [10.5 / 48, 20.5 / 64],
            [47.5 / 48, 63.5 / 64],
        ]);
        // the service's denormalization lands on the original pixels
        expect(doc.points.map(([r, c]) => [
            pixelFromNormalized(r, 48),
            pixelFromNormalized(c, 64),
        ])).toEqual([[10, 20], [47, 63]]);
    });

    it("serializes drags as scribbles with fractional radius", () => {
        const prompt = new CanvasPrompt(100, 80);
        prompt.push(strokeAction("scribble", [[5, 6], [7, 9], [12, 9]], 4));
        const doc = prompt.serialize("ref-9") as ScribblesPromptDoc;
        expect(doc.kind).toBe("scribbles");
        expect(doc.strokes).toHaveLength(1);
        expect(doc.strokes[0].radius).toBe(4 / 80);
        expect(doc.strokes[0].points).toEqual([
            [5.5 / 80, 6.5 / 100],
            [7.5 / 80, 9.5 / 100],
            [12.5 / 80, 9.5 / 100],
        ]);
    });

    it("keeps the whole action history undoable, well past 20 steps", () => {
        const prompt = new CanvasPrompt(64, 64);
        for (let i = 0; i < 25; i++) prompt.push(pointAction(i, i));
        expect(prompt.list()).toHaveLength(25);
        for (let i = 0; i < 25; i++) expect(prompt.undo()).toBe(true);
        expect(prompt.isEmpty()).toBe(true);
        expect(prompt.undo()).toBe(false);
    });

    it("picks the wire kind from the tools used", () => {
        const points = new CanvasPrompt(32, 32);
        points.push(pointAction(1, 1));
        expect(points.kind()).toBe("points");

        const scribbles = new CanvasPrompt(32, 32);
        scribbles.push(strokeAction("scribble", [[1, 1], [2, 2]], 2));
        expect(scribbles.kind()).toBe("scribbles");

        const brush = new CanvasPrompt(32, 32);
        brush.push(strokeAction("brush", [[1, 1], [2, 2]], 2));
        expect(brush.kind()).toBe("mask");

        const mixed = new CanvasPrompt(32, 32);
        mixed.push(pointAction(1, 1));
        mixed.push(strokeAction("scribble", [[3, 3], [4, 4]], 2));
        expect(mixed.kind()).toBe("mask");
    });

    it("rejects out-of-bounds points and ignores empty actions", () => {
        const prompt = new CanvasPrompt(10, 10);
        expect(() => prompt.push(pointAction(10, 0))).toThrow(/outside/);
        expect(() => prompt.push(pointAction(0, -1))).toThrow(/outside/);
        prompt.push(strokeAction("scribble", [], 3));
        expect(prompt.isEmpty()).toBe(true);
    });

    it("replays actions into the raster the stamping primitives build", () => {
        const prompt = new CanvasPrompt(40, 30);
        prompt.push(pointAction(5, 7));
        prompt.push(strokeAction("brush", [[10, 4], [14, 20], [20, 22]], 2));
        prompt.push(strokeAction("scribble", [[25, 35]], 5));

        const expected = emptyRaster(40, 30);
        stampDisk(expected, 5, 7, POINT_RADIUS);
        stampStroke(expected, [[10, 4], [14, 20], [20, 22]], 2);
        stampStroke(expected, [[25, 35]], 5); // lone point: disk at stroke radius
        expect(rastersEqual(prompt.maskRaster(), expected)).toBe(true);
    });

    it("requires a mask_ref to serialize mask prompts and rejects empty ones", () => {
        const prompt = new CanvasPrompt(16, 16);
        expect(() => prompt.serialize("ref")).toThrow(/empty/);
        prompt.push(strokeAction("brush", [[4, 4], [8, 8]], 2));
        expect(() => prompt.serialize("ref")).toThrow(/mask/);
        const doc = prompt.serialize("ref", "mask-1");
        expect(doc).toEqual({ kind: "mask", reference_image_id: "ref", mask_ref: "mask-1" });
    });
});
