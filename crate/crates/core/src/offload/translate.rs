//! Rendering workloads into provider-dialect job documents.
//!
//! Translation is a pure function of (spec, flavor): byte-identical output
//! for identical input, total over all three flavors. Fields substitute
//! verbatim; the accelerator line is omitted when the request names no
//! accelerator, and repeated per model when it names several.

use crate::job::WorkloadSpec;
use crate::offload::protocol::accel_model;
use crate::offload::ProviderFlavor;

pub fn translate(spec: &WorkloadSpec, flavor: ProviderFlavor) -> String {
    match flavor {
        ProviderFlavor::SlurmLike => slurm_like(spec),
        ProviderFlavor::CondorLike => condor_like(spec),
        ProviderFlavor::ContainerRuntime => container_runtime(spec),
    }
}

fn joined_command(spec: &WorkloadSpec) -> String {
    spec.command.join(" ")
}

fn slurm_like(spec: &WorkloadSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("#DIRECTIVE job-name={}\n", spec.id));
    out.push_str(&format!("#DIRECTIVE cpus={}\n", spec.request.cpu_cores));
    out.push_str(&format!("#DIRECTIVE mem={}G\n", spec.request.memory_gib));
    for (key, slices) in &spec.request.accel {
        out.push_str(&format!(
            "#DIRECTIVE gres=accel:{}:{}\n",
            accel_model(key),
            slices
        ));
    }
    out.push_str(&format!("run {} {}\n", spec.image, joined_command(spec)));
    out
}

fn condor_like(spec: &WorkloadSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("executable = {}\n", spec.image));
    out.push_str(&format!("arguments = {}\n", joined_command(spec)));
    out.push_str(&format!("request_cpus = {}\n", spec.request.cpu_cores));
    out.push_str(&format!("request_memory_gb = {}\n", spec.request.memory_gib));
    for (key, slices) in &spec.request.accel {
        out.push_str(&format!(
            "request_accelerators = {}:{}\n",
            accel_model(key),
            slices
        ));
    }
    out.push_str("queue 1\n");
    out
}

fn container_runtime(spec: &WorkloadSpec) -> String {
    let mut out = String::new();
    out.push_str("run\n");
    out.push_str(&format!("--cpus {}\n", spec.request.cpu_cores));
    out.push_str(&format!("--memory {}g\n", spec.request.memory_gib));
    for (key, slices) in &spec.request.accel {
        out.push_str(&format!("--accel {}:{}\n", accel_model(key), slices));
    }
    out.push_str(&format!("{}\n", spec.image));
    for token in &spec.command {
        out.push_str(&format!("{token}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::job::WorkloadKind;
    use crate::resources::ResourceVector;

    fn spec(cpu: u64, mem: u64, accel: Option<(&str, u64)>) -> WorkloadSpec {
        let mut request = ResourceVector::new(cpu, mem);
        if let Some((model, slices)) = accel {
            request = request.with_accel(format!("{model}-slice"), slices);
        }
        WorkloadSpec {
            id: "train-007".to_string(),
            kind: WorkloadKind::Batch,
            project: "cms".to_string(),
            user: "ada".to_string(),
            request,
            image: "ml-base:2".to_string(),
            command: vec!["python".to_string(), "train.py".to_string()],
            est_duration: 300,
            max_retries: 1,
            submit_time: 0,
        }
    }

    #[test]
    fn slurm_five_line_script_with_accelerator() {
        let doc = translate(&spec(4, 16, Some(("a100", 1))), ProviderFlavor::SlurmLike);
        assert_eq!(
            doc,
            "#DIRECTIVE job-name=train-007\n\
             #DIRECTIVE cpus=4\n\
             #DIRECTIVE mem=16G\n\
             #DIRECTIVE gres=accel:a100:1\n\
             run ml-base:2 python train.py\n"
        );
        assert_eq!(doc.lines().count(), 5);
    }

    #[test]
    fn condor_script_shape() {
        let doc = translate(&spec(2, 8, Some(("t4", 1))), ProviderFlavor::CondorLike);
        assert_eq!(
            doc,
            "executable = ml-base:2\n\
             arguments = python train.py\n\
             request_cpus = 2\n\
             request_memory_gb = 8\n\
             request_accelerators = t4:1\n\
             queue 1\n"
        );
    }

    #[test]
    fn container_token_list_without_accelerator() {
        let doc = translate(&spec(1, 2, None), ProviderFlavor::ContainerRuntime);
        assert_eq!(doc, "run\n--cpus 1\n--memory 2g\nml-base:2\npython\ntrain.py\n");
        assert!(!doc.contains("--accel"));
    }

    #[test]
    fn accel_line_omitted_everywhere_when_absent() {
        for flavor in [
            ProviderFlavor::SlurmLike,
            ProviderFlavor::CondorLike,
            ProviderFlavor::ContainerRuntime,
        ] {
            let doc = translate(&spec(1, 1, None), flavor);
            assert!(!doc.contains("accel"), "{flavor:?}: {doc}");
        }
    }

    #[test]
    fn translation_is_deterministic() {
        let s = spec(8, 64, Some(("a100", 3)));
        for flavor in [
            ProviderFlavor::SlurmLike,
            ProviderFlavor::CondorLike,
            ProviderFlavor::ContainerRuntime,
        ] {
            assert_eq!(translate(&s, flavor), translate(&s, flavor));
        }
    }

    #[test]
    fn multiple_models_render_one_line_each_in_key_order() {
        let mut s = spec(2, 4, Some(("t4", 2)));
        s.request = s.request.with_accel("a100-slice", 1);
        let doc = translate(&s, ProviderFlavor::SlurmLike);
        let gres: Vec<&str> = doc.lines().filter(|l| l.contains("gres")).collect();
        assert_eq!(
            gres,
            vec!["#DIRECTIVE gres=accel:a100:1", "#DIRECTIVE gres=accel:t4:2"]
        );
    }
}
