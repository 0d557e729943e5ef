/**
 * Job polling at a fixed cadence (1 Hz by default). The service keeps
 * jobs at seconds-to-minutes scale, so plain polling beats a push
 * channel on simplicity. The returned handle cancels cleanly when the
 * page navigates away or the session is torn down.
 */

import type { MattingApi } from "./api.js";
import type { JobDoc } from "./types.js";

export const POLL_INTERVAL_MS = 1000;

export type PollHandle = {
    /** Resolves with the terminal job document (done or failed);
     * rejects on transport errors; resolves null when cancelled. */
    result: Promise<JobDoc | null>;
    cancel: () => void;
};

export function pollJob(
    api: MattingApi,
    jobId: string,
    onUpdate: (job: JobDoc) => void,
    intervalMs = POLL_INTERVAL_MS,
): PollHandle {
    let cancelled = false;
    let timer: ReturnType<typeof setTimeout> | null = null;
    let settle: (doc: JobDoc | null) => void = () => {};

    const result = new Promise<JobDoc | null>((resolve, reject) => {
        settle = resolve;
        const tick = async () => {
            if (cancelled) {
                resolve(null);
                return;
            }
            let job: JobDoc;
            try {
                job = await api.getJob(jobId);
            } catch (err) {
                reject(err);
                return;
            }
            if (cancelled) {
                resolve(null);
                return;
            }
            onUpdate(job);
            if (job.state === "done" || job.state === "failed") {
                resolve(job);
                return;
            }
            timer = setTimeout(tick, intervalMs);
        };
        void tick();
    });

    return {
        result,
        cancel: () => {
            cancelled = true;
            if (timer !== null) clearTimeout(timer);
            // resolve right away; a getJob still in flight is discarded by
            // the cancelled checks (settling twice is a no-op)
            settle(null);
        },
    };
}
