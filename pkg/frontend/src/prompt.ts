/**
 * The drawable prompt: an undoable list of annotation actions on the
 * reference image, serializable to the service's wire JSON.
 *
 * Click, drag and brush actions accumulate in image pixel space. A
 * pure-click prompt serializes as `points`, pure drags as `scribbles`;
 * anything involving the brush, or a mix of tools, is rasterized into
 * a binary mask and uploaded as a PNG referenced by `mask_ref`, since
 * the wire schema carries exactly one prompt kind.
 */

import { POINT_RADIUS, cellCenter, emptyRaster, stampDisk, stampStroke } from "./raster.js";
import type { GrayRaster, PromptDoc } from "./types.js";

export type Tool = "point" | "scribble" | "brush";

export type PromptAction = {
    tool: Tool;
    /** [row, col] pixels; a point action has exactly one entry. */
    points: [number, number][];
    /** Stroke radius in pixels; points always stamp at POINT_RADIUS. */
    radius: number;
};

export function pointAction(row: number, col: number): PromptAction {
    return { tool: "point", points: [[row, col]], radius: POINT_RADIUS };
}

export function strokeAction(tool: "scribble" | "brush", points: [number, number][], radius: number): PromptAction {
    return { tool, points, radius };
}

export class CanvasPrompt {
    readonly width: number;
    readonly height: number;
    private actions: PromptAction[] = [];

    constructor(width: number, height: number) {
        if (width < 1 || height < 1) {
            throw new Error(`prompt canvas must be at least 1x1, got ${width}x${height}`);
        }
        this.width = width;
        this.height = height;
    }

    /** Committed actions, oldest first. */
    list(): readonly PromptAction[] {
        return this.actions;
    }

    push(action: PromptAction): void {
        if (action.points.length === 0) return; // nothing was drawn
        for (const [row, col] of action.points) {
            if (row < 0 || row >= this.height || col < 0 || col >= this.width) {
                throw new Error(`prompt point (${row}, ${col}) outside ${this.height}x${this.width}`);
            }
        }
        this.actions.push(action);
    }

    /** The full history stays undoable; returns false on an empty stack. */
    undo(): boolean {
        return this.actions.pop() !== undefined;
    }

    clear(): void {
        this.actions = [];
    }

    isEmpty(): boolean {
        return this.actions.length === 0;
    }

    /** The wire kind this prompt will serialize as. */
    kind(): "points" | "scribbles" | "mask" {
        if (this.actions.some((a) => a.tool === "brush")) return "mask";
        const tools = new Set(this.actions.map((a) => a.tool));
        if (tools.size > 1) return "mask";
        return tools.has("scribble") ? "scribbles" : "points";
    }

    /** Replay every action into one binary raster (brush preview / mask upload). */
    maskRaster(): GrayRaster {
        const raster = emptyRaster(this.width, this.height);
        for (const action of this.actions) {
            if (action.tool === "point") {
                stampDisk(raster, action.points[0][0], action.points[0][1], POINT_RADIUS);
            } else {
                stampStroke(raster, action.points, action.radius);
            }
        }
        return raster;
    }

    /**
     * Serialize to the service prompt document. A mask prompt needs the
     * image id of the uploaded mask PNG; the other kinds encode their
     * geometry at pixel cell centers so the server recovers the exact
     * pixels this canvas painted.
     */
    serialize(referenceImageId: string, maskRef?: string): PromptDoc {
        if (this.isEmpty()) throw new Error("cannot serialize an empty prompt");
        const kind = this.kind();
        if (kind === "points") {
            return {
                kind,
                reference_image_id: referenceImageId,
                points: this.actions.map((a) => [
                    cellCenter(a.points[0][0], this.height),
                    cellCenter(a.points[0][1], this.width),
                ]),
            };
        }
        if (kind === "scribbles") {
            return {
                kind,
                reference_image_id: referenceImageId,
                strokes: this.actions.map((a) => ({
                    points: a.points.map(([r, c]) => [
                        cellCenter(r, this.height),
                        cellCenter(c, this.width),
                    ]),
                    radius: a.radius / Math.min(this.height, this.width),
                })),
            };
        }
        if (!maskRef) throw new Error("mask prompt needs the uploaded mask image id");
        return { kind: "mask", reference_image_id: referenceImageId, mask_ref: maskRef };
    }
}
