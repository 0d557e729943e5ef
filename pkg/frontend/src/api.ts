/**
 * Thin fetch client for the matting service endpoints.
 *
 * Every helper throws ApiError on a non-2xx response, carrying the
 * HTTP status and the server's `detail` message so the UI can show
 * exactly what the service said.
 */

import type { JobDoc, PromptDoc, SessionDoc } from "./types.js";

export class ApiError extends Error {
    status: number;

    constructor(status: number, detail: string) {
        super(detail);
        this.name = "ApiError";
        this.status = status;
    }
}

async function toError(response: Response): Promise<ApiError> {
    let detail = `${response.status} ${response.statusText}`;
    try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
        // non-JSON error body; keep the status line
    }
    return new ApiError(response.status, detail);
}

export class MattingApi {
    baseUrl: string;

    constructor(baseUrl = "") {
        this.baseUrl = baseUrl.replace(/\/$/, "");
    }

    private async json<T>(path: string, init?: RequestInit): Promise<T> {
        const response = await fetch(this.baseUrl + path, init);
        if (!response.ok) throw await toError(response);
        return (await response.json()) as T;
    }

    createSession(): Promise<SessionDoc> {
        return this.json<SessionDoc>("/sessions", { method: "POST" });
    }

    getSession(sid: string): Promise<SessionDoc> {
        return this.json<SessionDoc>(`/sessions/${encodeURIComponent(sid)}`);
    }

    async uploadImages(
        sid: string,
        files: { name: string; bytes: Uint8Array }[],
    ): Promise<{ images: { image_id: string; name: string; file: string }[] }> {
        const form = new FormData();
        for (const file of files) {
            const copy = new Uint8Array(file.bytes);
            form.append("files", new Blob([copy], { type: "image/png" }), file.name);
        }
        return this.json(`/sessions/${encodeURIComponent(sid)}/images`, {
            method: "POST",
            body: form,
        });
    }

    setPrompt(sid: string, prompt: PromptDoc): Promise<{ session_id: string; prompt: PromptDoc }> {
        return this.json(`/sessions/${encodeURIComponent(sid)}/prompt`, {
            method: "PUT",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(prompt),
        });
    }

    createJob(sid: string): Promise<JobDoc> {
        return this.json<JobDoc>(`/sessions/${encodeURIComponent(sid)}/jobs`, {
            method: "POST",
        });
    }

    getJob(jid: string): Promise<JobDoc> {
        return this.json<JobDoc>(`/jobs/${encodeURIComponent(jid)}`);
    }

    private async bytes(path: string): Promise<Uint8Array> {
        const response = await fetch(this.baseUrl + path);
        if (!response.ok) throw await toError(response);
        return new Uint8Array(await response.arrayBuffer());
    }

    fetchAlpha(jid: string, imageId: string): Promise<Uint8Array> {
        return this.bytes(
            `/jobs/${encodeURIComponent(jid)}/results/${encodeURIComponent(imageId)}`,
        );
    }

    fetchGuidance(jid: string, imageId: string): Promise<Uint8Array> {
        return this.bytes(
            `/jobs/${encodeURIComponent(jid)}/guidance/${encodeURIComponent(imageId)}`,
        );
    }
}
