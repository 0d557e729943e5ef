/**
 * The annotator's state and service choreography, free of any DOM so
 * the whole loop is testable headlessly. The page layer renders from
 * this state and forwards pointer/button events into it.
 *
 * Server sessions append images and never remove them, and the job
 * planner targets every image that is not the current reference or
 * mask. A mask PNG uploaded for an earlier run would therefore get
 * matted as a target once the prompt changes, so the driver starts a
 * fresh server session (re-uploading the user's images) whenever a
 * previously uploaded mask no longer matches the prompt. Unchanged
 * reruns keep their session, which lets the service's result cache
 * answer them instantly.
 */

import { ApiError, MattingApi } from "./api.js";
import { checkerComposite, heatOverlay, rgbaToGray } from "./composite.js";
import { encodeGrayPng } from "./png.js";
import { pollJob, type PollHandle } from "./poller.js";
import { CanvasPrompt, type PromptAction } from "./prompt.js";
import type { GrayRaster, ImageDecoder, JobDoc, RgbaRaster } from "./types.js";

export type LocalImage = {
    /** Client-side handle; the server id from the first upload. */
    id: string;
    name: string;
    bytes: Uint8Array;
    raster: RgbaRaster;
};

export type ResultTile = {
    imageId: string;
    name: string;
    image: RgbaRaster;
    alpha: GrayRaster;
    guidance: GrayRaster;
    cutout: RgbaRaster;
    heat: RgbaRaster;
};

export type Phase = "idle" | "uploading" | "submitting" | "polling" | "fetching";

const MASK_UPLOAD_NAME = "prompt-mask.png";

function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
    if (a.length !== b.length) return false;
    for (let i = 0; i < a.length; i++) {
        if (a[i] !== b[i]) return false;
    }
    return true;
}

export class AnnotatorSession {
    readonly api: MattingApi;
    private readonly decode: ImageDecoder;
    private readonly onChange: () => void;
    private readonly pollIntervalMs: number;

    images: LocalImage[] = [];
    referenceId: string | null = null;
    prompt: CanvasPrompt | null = null;
    job: JobDoc | null = null;
    tiles: ResultTile[] = [];
    /** Results on screen belong to an older prompt. */
    stale = false;
    banner: string | null = null;
    phase: Phase = "idle";

    private remoteSession: string | null = null;
    private remoteIds = new Map<string, string>();
    private remoteMask: { ref: string; png: Uint8Array } | null = null;
    private dirtySinceRun = true;
    private poll: PollHandle | null = null;
    private disposed = false;

    constructor(
        api: MattingApi,
        decode: ImageDecoder,
        onChange: () => void = () => {},
        pollIntervalMs?: number,
    ) {
        this.api = api;
        this.decode = decode;
        this.onChange = onChange;
        this.pollIntervalMs = pollIntervalMs ?? 1000;
    }

    // ---------------------------------------------------------- uploads

    /** Create the server session up front so connectivity problems
     * surface immediately instead of at the first run. */
    async init(): Promise<void> {
        if (this.remoteSession !== null) return;
        try {
            const doc = await this.api.createSession();
            this.remoteSession = doc.session_id;
            this.banner = null;
        } catch (err) {
            this.banner = describeError(err);
        }
        this.onChange();
    }

    async addImages(files: { name: string; bytes: Uint8Array }[]): Promise<void> {
        if (files.length === 0) return;
        if (this.remoteSession === null) {
            await this.init();
            if (this.remoteSession === null) return; // init set the banner
        }
        this.phase = "uploading";
        this.onChange();
        try {
            const { images } = await this.api.uploadImages(this.remoteSession, files);
            for (let i = 0; i < images.length; i++) {
                const raster = await this.decode(files[i].bytes);
                this.images.push({
                    id: images[i].image_id,
                    name: files[i].name,
                    bytes: new Uint8Array(files[i].bytes),
                    raster,
                });
                this.remoteIds.set(images[i].image_id, images[i].image_id);
            }
            this.banner = null;
            this.markEdited();
        } catch (err) {
            this.banner = describeError(err);
        }
        this.phase = "idle";
        this.onChange();
    }

    image(id: string): LocalImage | undefined {
        return this.images.find((img) => img.id === id);
    }

    // ---------------------------------------------------------- prompting

    selectReference(imageId: string): void {
        const image = this.image(imageId);
        if (!image) throw new Error(`unknown image ${imageId}`);
        if (this.referenceId === imageId) return;
        this.referenceId = imageId;
        this.prompt = new CanvasPrompt(image.raster.width, image.raster.height);
        this.markEdited();
        this.onChange();
    }

    /** Drawing is blocked until a reference is chosen. */
    canAnnotate(): boolean {
        return this.referenceId !== null && this.phase === "idle";
    }

    addAction(action: PromptAction): void {
        if (!this.prompt) throw new Error("select a reference image before drawing");
        this.prompt.push(action);
        this.markEdited();
        this.onChange();
    }

    undo(): boolean {
        if (!this.prompt) return false;
        const undone = this.prompt.undo();
        if (undone) {
            this.markEdited();
            this.onChange();
        }
        return undone;
    }

    clearPrompt(): void {
        if (!this.prompt || this.prompt.isEmpty()) return;
        this.prompt.clear();
        this.markEdited();
        this.onChange();
    }

    private markEdited(): void {
        this.dirtySinceRun = true;
        if (this.tiles.length > 0) this.stale = true;
    }

    // ---------------------------------------------------------- running

    /** One job in flight per session; rerun only after an edit. */
    canRun(): boolean {
        return (
            this.phase === "idle" &&
            this.referenceId !== null &&
            this.prompt !== null &&
            !this.prompt.isEmpty() &&
            this.dirtySinceRun
        );
    }

    async run(): Promise<void> {
        if (!this.canRun() || this.disposed) return;
        const prompt = this.prompt!;
        const referenceId = this.referenceId!;
        this.banner = null;

        try {
            const maskPng = prompt.kind() === "mask" ? encodeMask(prompt) : null;

            const staleMaskUpload =
                this.remoteMask !== null &&
                (maskPng === null || !bytesEqual(this.remoteMask.png, maskPng));
            if (this.remoteSession === null || staleMaskUpload) {
                this.phase = "uploading";
                this.onChange();
                await this.rebuildRemoteSession();
            }

            try {
                this.job = await this.submit(referenceId, prompt, maskPng);
            } catch (err) {
                if (!(err instanceof ApiError) || err.status !== 404) throw err;
                // the server no longer knows this session (restart, expiry);
                // rebuild it once and resubmit
                this.phase = "uploading";
                this.onChange();
                await this.rebuildRemoteSession();
                this.job = await this.submit(referenceId, prompt, maskPng);
            }
            this.onChange();
            if (this.disposed) {
                this.phase = "idle";
                this.onChange();
                return;
            }

            this.phase = "polling";
            this.onChange();
            this.poll = pollJob(
                this.api,
                this.job!.job_id,
                (job) => {
                    this.job = job;
                    this.onChange();
                },
                this.pollIntervalMs,
            );
            const finished = await this.poll.result;
            this.poll = null;
            if (finished === null || this.disposed) {
                this.phase = "idle";
                this.onChange();
                return; // cancelled
            }
            if (finished.state === "failed") {
                this.banner = finished.error ?? "matting job failed";
                this.phase = "idle";
                this.onChange();
                return;
            }

            this.phase = "fetching";
            this.onChange();
            this.tiles = await this.fetchTiles(finished);
            this.stale = false;
            this.dirtySinceRun = false;
        } catch (err) {
            this.banner = describeError(err);
        }
        this.phase = "idle";
        this.onChange();
    }

    /** Upload the mask if one is due, set the prompt, create the job. */
    private async submit(
        referenceId: string,
        prompt: CanvasPrompt,
        maskPng: Uint8Array | null,
    ): Promise<JobDoc> {
        if (maskPng !== null && this.remoteMask === null) {
            this.phase = "uploading";
            this.onChange();
            const { images } = await this.api.uploadImages(this.remoteSession!, [
                { name: MASK_UPLOAD_NAME, bytes: maskPng },
            ]);
            this.remoteMask = { ref: images[0].image_id, png: maskPng };
        }
        this.phase = "submitting";
        this.onChange();
        const serverRef = this.remoteIds.get(referenceId);
        if (!serverRef) throw new Error(`reference ${referenceId} is not uploaded`);
        const doc = prompt.serialize(serverRef, this.remoteMask?.ref);
        await this.api.setPrompt(this.remoteSession!, doc);
        return this.api.createJob(this.remoteSession!);
    }

    /** Fresh server session with the user's images re-uploaded in order. */
    private async rebuildRemoteSession(): Promise<void> {
        const doc = await this.api.createSession();
        this.remoteSession = doc.session_id;
        this.remoteIds.clear();
        this.remoteMask = null;
        if (this.images.length === 0) return;
        const { images } = await this.api.uploadImages(
            this.remoteSession,
            this.images.map((img) => ({ name: img.name, bytes: img.bytes })),
        );
        for (let i = 0; i < this.images.length; i++) {
            this.remoteIds.set(this.images[i].id, images[i].image_id);
        }
    }

    /** Alpha and guidance are fetched once per target; every later view
     * toggle recomposites from these rasters locally. */
    private async fetchTiles(job: JobDoc): Promise<ResultTile[]> {
        const byServerId = new Map<string, LocalImage>();
        for (const [clientId, serverId] of this.remoteIds) {
            const image = this.image(clientId);
            if (image) byServerId.set(serverId, image);
        }
        const tiles: ResultTile[] = [];
        for (const targetId of job.targets) {
            const image = byServerId.get(targetId);
            if (!image) continue; // not one of ours (e.g. a superseded upload)
            const [alphaBytes, guidanceBytes] = await Promise.all([
                this.api.fetchAlpha(job.job_id, targetId),
                this.api.fetchGuidance(job.job_id, targetId),
            ]);
            const alpha = rgbaToGray(await this.decode(alphaBytes));
            const guidance = rgbaToGray(await this.decode(guidanceBytes));
            tiles.push({
                imageId: image.id,
                name: image.name,
                image: image.raster,
                alpha,
                guidance,
                cutout: checkerComposite(image.raster, alpha),
                heat: heatOverlay(image.raster, guidance),
            });
        }
        return tiles;
    }

    /** Retry whatever failed last: the run when one is pending, else the
     * initial connect. `run` rebuilds the server session if it was lost. */
    async retry(): Promise<void> {
        this.banner = null;
        this.onChange();
        if (this.canRun()) {
            await this.run();
        } else {
            await this.init();
        }
    }

    /** Cancel polling and drop the driver (page navigation). */
    dispose(): void {
        this.disposed = true;
        if (this.poll) {
            this.poll.cancel();
            this.poll = null;
        }
    }
}

/** Binary raster -> 0/255 grayscale PNG bytes for the mask upload. */
function encodeMask(prompt: CanvasPrompt): Uint8Array {
    const raster = prompt.maskRaster();
    const pixels = Uint8Array.from(raster.data, (v) => (v ? 255 : 0));
    return encodeGrayPng(raster.width, raster.height, pixels);
}

function describeError(err: unknown): string {
    if (err instanceof ApiError) return `service error ${err.status}: ${err.message}`;
    if (err instanceof Error && err.name === "TypeError") {
        return "matting service unreachable; is it running?";
    }
    return err instanceof Error ? err.message : String(err);
}
