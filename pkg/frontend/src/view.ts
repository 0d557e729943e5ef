/**
 * DOM rendering helpers. Everything here renders from driver state and
 * tile rasters alone, so the same functions serve the live page and
 * headless tests. Canvas pixel blits are skipped quietly when the 2D
 * context is unavailable (jsdom); element structure never depends on it.
 */

import type { ResultTile } from "./session.js";
import type { RgbaRaster } from "./types.js";

export type TileView = "cutout" | "guidance" | "image";

const TILE_VIEWS: { view: TileView; label: string }[] = [
    { view: "cutout", label: "Alpha" },
    { view: "guidance", label: "Guidance" },
    { view: "image", label: "Image" },
];

export function blitRaster(canvas: HTMLCanvasElement, raster: RgbaRaster, scale = 1): void {
    canvas.width = raster.width * scale;
    canvas.height = raster.height * scale;
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    const source = document.createElement("canvas");
    source.width = raster.width;
    source.height = raster.height;
    const sourceCtx = source.getContext("2d");
    if (!sourceCtx) return;
    sourceCtx.putImageData(
        new ImageData(new Uint8ClampedArray(raster.rgba), raster.width, raster.height),
        0,
        0,
    );
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(source, 0, 0, canvas.width, canvas.height);
}

export function tileRaster(tile: ResultTile, view: TileView): RgbaRaster {
    if (view === "cutout") return tile.cutout;
    if (view === "guidance") return tile.heat;
    return tile.image;
}

/** Build one result card: name, view canvas, and the three view toggles.
 * Toggling only re-blits rasters the tile already holds. */
export function renderTile(tile: ResultTile, scale = 1): HTMLElement {
    const card = document.createElement("div");
    card.className = "tile";
    card.dataset.imageId = tile.imageId;

    const title = document.createElement("div");
    title.className = "tile-name";
    title.textContent = tile.name;
    card.appendChild(title);

    const canvas = document.createElement("canvas");
    canvas.className = "tile-canvas";
    card.appendChild(canvas);

    const bar = document.createElement("div");
    bar.className = "tile-toggles";
    card.appendChild(bar);

    const select = (view: TileView) => {
        card.dataset.view = view;
        blitRaster(canvas, tileRaster(tile, view), scale);
        for (const button of Array.from(bar.children) as HTMLButtonElement[]) {
            button.classList.toggle("active", button.dataset.view === view);
        }
    };
    for (const { view, label } of TILE_VIEWS) {
        const button = document.createElement("button");
        button.type = "button";
        button.dataset.view = view;
        button.textContent = label;
        button.addEventListener("click", () => select(view));
        bar.appendChild(button);
    }
    select("cutout");
    return card;
}

export function renderTiles(container: HTMLElement, tiles: ResultTile[], scale = 1): void {
    container.replaceChildren(...tiles.map((tile) => renderTile(tile, scale)));
}

export function renderBanner(
    element: HTMLElement,
    message: string | null,
    onRetry: () => void,
): void {
    element.replaceChildren();
    element.hidden = message === null;
    if (message === null) return;
    const text = document.createElement("span");
    text.textContent = message;
    element.appendChild(text);
    const retry = document.createElement("button");
    retry.type = "button";
    retry.className = "retry";
    retry.textContent = "Retry";
    retry.addEventListener("click", onRetry);
    element.appendChild(retry);
}
