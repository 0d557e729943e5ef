/**
 * Page wiring for the annotator: upload a group of images, pick the
 * reference, draw the prompt, run batch matting, review the tiles.
 * All state lives in AnnotatorSession; this file only translates DOM
 * events into driver calls and repaints from driver state.
 */

import { MattingApi } from "./api.js";
import { canvasDecode } from "./decode.js";
import { pointAction, strokeAction } from "./prompt.js";
import { canvasToPixel } from "./raster.js";
import { AnnotatorSession } from "./session.js";
import { blitRaster, renderBanner, renderTiles } from "./view.js";

type DrawMode = "draw" | "brush";

const app = document.getElementById("app")!;
app.innerHTML = `
  <header>
    <h1>Batch matting annotator</h1>
    <p class="tagline">Upload a group, mark the subject on one reference, matte the rest.</p>
  </header>
  <div id="banner" class="banner" hidden></div>
  <section class="panel">
    <div class="panel-title">1. Images</div>
    <label class="upload">
      Add images
      <input id="file-input" type="file" accept="image/*" multiple>
    </label>
    <div id="image-strip" class="strip"></div>
  </section>
  <section class="panel">
    <div class="panel-title">2. Prompt on the reference</div>
    <div class="toolbar">
      <button id="mode-draw" type="button" class="active">Draw (click = point, drag = stroke)</button>
      <button id="mode-brush" type="button">Brush mask</button>
      <label class="radius">Radius
        <input id="radius" type="range" min="1" max="16" step="1" value="3">
        <span id="radius-value">3</span>px
      </label>
      <button id="undo" type="button">Undo</button>
      <button id="clear" type="button">Clear</button>
    </div>
    <canvas id="annotate"></canvas>
    <p id="hint" class="hint">Upload images, then click one above to choose the reference.</p>
  </section>
  <section class="panel">
    <div class="panel-title">3. Run</div>
    <button id="run" type="button" disabled>Run matting</button>
    <span id="progress" class="progress"></span>
    <span id="stale" class="stale-badge" hidden>stale: prompt changed since this run</span>
  </section>
  <section class="panel">
    <div class="panel-title">4. Results</div>
    <div id="tiles" class="tiles"></div>
  </section>
`;

const fileInput = document.getElementById("file-input") as HTMLInputElement;
const strip = document.getElementById("image-strip")!;
const modeDraw = document.getElementById("mode-draw") as HTMLButtonElement;
const modeBrush = document.getElementById("mode-brush") as HTMLButtonElement;
const radiusInput = document.getElementById("radius") as HTMLInputElement;
const radiusValue = document.getElementById("radius-value")!;
const undoButton = document.getElementById("undo") as HTMLButtonElement;
const clearButton = document.getElementById("clear") as HTMLButtonElement;
const annotate = document.getElementById("annotate") as HTMLCanvasElement;
const hint = document.getElementById("hint")!;
const runButton = document.getElementById("run") as HTMLButtonElement;
const progress = document.getElementById("progress")!;
const staleBadge = document.getElementById("stale")!;
const tilesBox = document.getElementById("tiles")!;
const bannerBox = document.getElementById("banner")!;

const driver = new AnnotatorSession(new MattingApi(""), canvasDecode, render);

let mode: DrawMode = "draw";
let strokeRadius = 3;
let livePath: [number, number][] = [];
let drawing = false;

function referenceImage() {
    return driver.referenceId ? driver.image(driver.referenceId) : undefined;
}

function displayScale(width: number, height: number): number {
    const longest = Math.max(width, height);
    if (longest >= 640) return 640 / longest;
    return Math.max(1, Math.floor(448 / longest));
}

// ------------------------------------------------------------- rendering

function renderStrip() {
    strip.replaceChildren();
    for (const image of driver.images) {
        const thumb = document.createElement("button");
        thumb.type = "button";
        thumb.className = "thumb";
        thumb.title = `${image.name} (${image.raster.width}x${image.raster.height})`;
        thumb.classList.toggle("selected", image.id === driver.referenceId);
        const canvas = document.createElement("canvas");
        blitRaster(canvas, image.raster, 72 / Math.max(image.raster.width, image.raster.height));
        thumb.appendChild(canvas);
        const label = document.createElement("span");
        label.textContent = image.id === driver.referenceId ? `${image.name} (reference)` : image.name;
        thumb.appendChild(label);
        thumb.addEventListener("click", () => driver.selectReference(image.id));
        strip.appendChild(thumb);
    }
}

function renderAnnotationCanvas() {
    const image = referenceImage();
    if (!image) {
        annotate.hidden = true;
        hint.hidden = false;
        return;
    }
    annotate.hidden = false;
    hint.hidden = true;
    const scale = displayScale(image.raster.width, image.raster.height);
    blitRaster(annotate, image.raster, scale);
    const ctx = annotate.getContext("2d");
    if (!ctx || !driver.prompt) return;

    ctx.strokeStyle = "rgba(255, 64, 64, 0.55)";
    ctx.fillStyle = "rgba(255, 64, 64, 0.55)";
    ctx.lineCap = "round";
    ctx.lineJoin = "round";
    const paths = [...driver.prompt.list()];
    if (drawing && livePath.length > 0) {
        paths.push(strokeAction(mode === "brush" ? "brush" : "scribble", livePath, strokeRadius));
    }
    for (const action of paths) {
        if (action.points.length === 1) {
            const [r, c] = action.points[0];
            ctx.beginPath();
            ctx.arc((c + 0.5) * scale, (r + 0.5) * scale, action.radius * scale, 0, Math.PI * 2);
            ctx.fill();
            continue;
        }
        ctx.lineWidth = 2 * action.radius * scale;
        ctx.beginPath();
        action.points.forEach(([r, c], i) => {
            if (i === 0) ctx.moveTo((c + 0.5) * scale, (r + 0.5) * scale);
            else ctx.lineTo((c + 0.5) * scale, (r + 0.5) * scale);
        });
        ctx.stroke();
    }
}

function renderRunState() {
    runButton.disabled = !driver.canRun();
    staleBadge.hidden = !driver.stale;
    const job = driver.job;
    if (driver.phase === "uploading") progress.textContent = "uploading...";
    else if (driver.phase === "submitting") progress.textContent = "starting job...";
    else if (driver.phase === "fetching") progress.textContent = "fetching results...";
    else if (job && driver.phase === "polling") {
        progress.textContent = `${job.state}: ${job.progress.done}/${job.progress.total}`;
    } else if (job && job.state === "done") {
        progress.textContent = `done: ${job.progress.done}/${job.progress.total}`;
    } else {
        progress.textContent = "";
    }
}

function render() {
    renderStrip();
    renderAnnotationCanvas();
    renderRunState();
    renderTiles(tilesBox, driver.tiles, 2);
    renderBanner(bannerBox, driver.banner, () => void driver.retry());
    undoButton.disabled = !driver.prompt || driver.prompt.isEmpty();
    clearButton.disabled = undoButton.disabled;
}

// ------------------------------------------------------------- events

fileInput.addEventListener("change", async () => {
    const files = Array.from(fileInput.files ?? []);
    fileInput.value = "";
    const payload = [];
    for (const file of files) {
        payload.push({ name: file.name, bytes: new Uint8Array(await file.arrayBuffer()) });
    }
    await driver.addImages(payload);
});

function setMode(next: DrawMode) {
    mode = next;
    modeDraw.classList.toggle("active", next === "draw");
    modeBrush.classList.toggle("active", next === "brush");
}
modeDraw.addEventListener("click", () => setMode("draw"));
modeBrush.addEventListener("click", () => setMode("brush"));

radiusInput.addEventListener("input", () => {
    strokeRadius = Number(radiusInput.value);
    radiusValue.textContent = radiusInput.value;
});

undoButton.addEventListener("click", () => driver.undo());
clearButton.addEventListener("click", () => driver.clearPrompt());
runButton.addEventListener("click", () => void driver.run());

function eventPixel(event: PointerEvent): [number, number] | null {
    const image = referenceImage();
    if (!image) return null;
    return canvasToPixel(
        event.offsetX,
        event.offsetY,
        annotate.width,
        annotate.height,
        image.raster.width,
        image.raster.height,
    );
}

annotate.addEventListener("pointerdown", (event) => {
    if (!driver.canAnnotate()) return;
    const pixel = eventPixel(event);
    if (!pixel) return;
    drawing = true;
    livePath = [pixel];
    annotate.setPointerCapture(event.pointerId);
    renderAnnotationCanvas();
});

annotate.addEventListener("pointermove", (event) => {
    if (!drawing) return;
    const pixel = eventPixel(event);
    if (!pixel) return;
    const last = livePath[livePath.length - 1];
    if (pixel[0] !== last[0] || pixel[1] !== last[1]) {
        livePath.push(pixel);
        renderAnnotationCanvas();
    }
});

annotate.addEventListener("pointerup", () => {
    if (!drawing) return;
    drawing = false;
    const path = livePath;
    livePath = [];
    if (path.length === 0) return;
    if (mode === "brush") {
        driver.addAction(strokeAction("brush", path, strokeRadius));
    } else if (path.length === 1) {
        driver.addAction(pointAction(path[0][0], path[0][1]));
    } else {
        driver.addAction(strokeAction("scribble", path, strokeRadius));
    }
});

window.addEventListener("beforeunload", () => driver.dispose());

void driver.init();
render();
